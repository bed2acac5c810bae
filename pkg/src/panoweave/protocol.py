"""Host side of the denoiser plugin wire protocol.

Frames are length-prefixed: a little-endian u32 payload length followed
by the payload.  Text frames carry UTF-8 JSON; tensor frames carry raw
little-endian float32 in (F, C, H, W) C order — identical to the PWLT
payload layout.

Session:
  host -> {"proto": 1}
  plug -> capabilities {"proto": 1, "max_window": [w, h], "max_frames": n,
                        "conditioning": [...]}
  then repeated:
  host -> denoise header frame, tensor frame
  plug -> result header frame, tensor frame   (or {"type": "error", ...})
EOF from the host ends the session.
"""

from __future__ import annotations

import json
import select
import shlex
import struct
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError

__all__ = ["FrameStream", "PluginChannel", "ConformanceReport", "run_conformance",
           "encode_tensor", "decode_tensor", "PROTO_VERSION"]

PROTO_VERSION = 1
_LEN = struct.Struct("<I")
MAX_FRAME = 1 << 31  # sanity cap


def encode_tensor(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(payload: bytes, shape, *, offset: int = 0) -> np.ndarray:
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise ProtocolError(
            f"payload length mismatch: got {len(payload)} bytes, "
            f"shape {list(shape)} needs {expected}", byte_offset=offset)
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


class FrameStream:
    """Length-prefixed framing over a pair of binary file objects."""

    def __init__(self, reader, writer, timeout: float | None = 30.0):
        self._r = reader
        self._w = writer
        self.timeout = timeout
        self.bytes_read = 0

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            if self.timeout is not None and hasattr(self._r, "fileno"):
                ready, _, _ = select.select([self._r], [], [], self.timeout)
                if not ready:
                    raise ProtocolError(f"timeout waiting for {remaining} bytes",
                                        byte_offset=self.bytes_read)
            chunk = self._r.read(remaining)
            if not chunk:
                raise ProtocolError(
                    f"stream closed with {remaining} bytes outstanding",
                    byte_offset=self.bytes_read)
            self.bytes_read += len(chunk)
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def read_frame(self) -> bytes:
        header = self._read_exact(_LEN.size)
        (length,) = _LEN.unpack(header)
        if length > MAX_FRAME:
            raise ProtocolError(f"frame length {length} exceeds cap",
                                byte_offset=self.bytes_read - _LEN.size)
        return self._read_exact(length)

    def write_frame(self, payload: bytes) -> None:
        self._w.write(_LEN.pack(len(payload)))
        self._w.write(payload)
        self._w.flush()

    def write_json(self, obj: dict) -> None:
        self.write_frame(json.dumps(obj).encode("utf-8"))

    def read_json(self) -> dict:
        start = self.bytes_read
        payload = self.read_frame()
        try:
            obj = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"bad text frame: {exc}", byte_offset=start)
        if not isinstance(obj, dict):
            raise ProtocolError("text frame is not a JSON object", byte_offset=start)
        return obj


class PluginChannel:
    """One spawned plugin subprocess with a completed handshake."""

    def __init__(self, command: str | list[str], timeout: float | None = 30.0,
                 env: dict | None = None):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command)
        # bufsize=0: reads must hit the pipe fd directly, or select() in
        # FrameStream would miss data parked in a BufferedReader
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            env=env, bufsize=0)
        self.stream = FrameStream(self._proc.stdout, self._proc.stdin, timeout=timeout)
        self.capabilities: dict = {}
        self._handshake()

    def _handshake(self) -> None:
        self.stream.write_json({"proto": PROTO_VERSION})
        caps = self.stream.read_json()
        if caps.get("proto") != PROTO_VERSION:
            raise ProtocolError(f"plugin declared protocol {caps.get('proto')!r}, "
                                f"expected {PROTO_VERSION}")
        self.capabilities = caps

    def denoise(self, header: dict, tensor: np.ndarray) -> np.ndarray:
        self.stream.write_json(header)
        self.stream.write_frame(encode_tensor(tensor))
        resp = self.stream.read_json()
        if resp.get("type") == "error":
            raise ProtocolError(f"plugin error: {resp.get('message', '(no message)')}",
                                byte_offset=self.stream.bytes_read)
        if resp.get("type") != "result":
            raise ProtocolError(f"unexpected response type {resp.get('type')!r}",
                                byte_offset=self.stream.bytes_read)
        shape = resp.get("shape")
        if list(shape or ()) != list(header["shape"]):
            raise ProtocolError(f"response shape {shape} != request shape "
                                f"{header['shape']}", byte_offset=self.stream.bytes_read)
        start = self.stream.bytes_read
        payload = self.stream.read_frame()
        return decode_tensor(payload, shape, offset=start)

    def close(self) -> None:
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=5)
        except Exception:
            self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class ConformanceReport:
    command: list[str]
    capabilities: dict = field(default_factory=dict)
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(passed for _, passed, _ in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append((name, passed, detail))

    def text(self) -> str:
        lines = [f"plugin conformance: {' '.join(self.command)}"]
        for name, passed, detail in self.checks:
            mark = "PASS" if passed else "FAIL"
            lines.append(f"  [{mark}] {name}" + (f" — {detail}" if detail else ""))
        lines.append(f"result: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines)


def run_conformance(command: str | list[str], exchanges: int = 3,
                    env: dict | None = None, timeout: float = 30.0) -> ConformanceReport:
    """Drive handshake plus a few denoise exchanges; validate the framing."""
    if isinstance(command, str):
        command = shlex.split(command)
    report = ConformanceReport(command=list(command))
    rng = np.random.Generator(np.random.Philox(12345))
    shape = (2, 3, 8, 8)
    header = {
        "type": "denoise", "t": 2, "alpha_bar_t": 0.25, "alpha_bar_prev": 0.5,
        "dtype": "f32", "shape": list(shape),
        "geometry": {"kind": "pano", "region": [0, 2, 0, 8, 0, 8],
                     "pano_size": [2, 8, 16], "h_ring": True, "t_ring": False},
        "conditioning": None,
    }
    try:
        channel = PluginChannel(command, timeout=timeout, env=env)
    except (ProtocolError, OSError) as exc:
        report.add("handshake", False, str(exc))
        return report
    caps = channel.capabilities
    report.capabilities = caps
    report.add("handshake", True, f"capabilities: {json.dumps(caps, sort_keys=True)}")
    has_caps = all(k in caps for k in ("max_window", "max_frames"))
    report.add("capability fields", has_caps,
               "" if has_caps else "missing max_window/max_frames")
    try:
        first = None
        for i in range(exchanges):
            tensor = rng.standard_normal(shape, dtype=np.float32)
            out = channel.denoise(header, tensor)
            finite = bool(np.isfinite(out).all())
            report.add(f"exchange {i + 1}", finite,
                       "" if finite else "non-finite value in response")
            if i == 0:
                first = (tensor.copy(), out.copy())
        # determinism: byte-identical result for an identical request
        tensor, out = first
        again = channel.denoise(header, tensor)
        identical = again.tobytes() == out.tobytes()
        report.add("determinism", identical,
                   "" if identical else "repeated request produced different bytes")
    except ProtocolError as exc:
        report.add("protocol", False, str(exc))
    finally:
        channel.close()
    return report
