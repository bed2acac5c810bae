"""Length-prefixed binary framing over byte streams.

Frame = little-endian u32 payload length + payload.  Text frames are
UTF-8 JSON; tensor frames are raw little-endian float32 in C order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

_LEN = struct.Struct("<I")
MAX_FRAME = 1 << 31


class FramingError(Exception):
    pass


def read_exact(stream, n: int) -> bytes | None:
    """Read exactly n bytes; None on clean EOF at a frame boundary."""
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            if not chunks:
                return None
            raise FramingError(f"stream closed mid-frame ({remaining} bytes short)")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream) -> bytes | None:
    header = read_exact(stream, _LEN.size)
    if header is None:
        return None
    (length,) = _LEN.unpack(header)
    if length > MAX_FRAME:
        raise FramingError(f"frame length {length} exceeds cap")
    payload = read_exact(stream, length)
    if payload is None and length > 0:
        raise FramingError("stream closed before frame payload")
    return payload if payload is not None else b""


def write_frame(stream, payload: bytes) -> None:
    stream.write(_LEN.pack(len(payload)))
    stream.write(payload)
    stream.flush()


def read_json(stream) -> dict | None:
    payload = read_frame(stream)
    if payload is None:
        return None
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FramingError(f"bad text frame: {exc}") from exc
    if not isinstance(obj, dict):
        raise FramingError("text frame is not a JSON object")
    return obj


def write_json(stream, obj: dict) -> None:
    write_frame(stream, json.dumps(obj).encode("utf-8"))


def decode_tensor(payload: bytes, shape) -> np.ndarray:
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise FramingError(f"tensor payload {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def encode_tensor(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()
