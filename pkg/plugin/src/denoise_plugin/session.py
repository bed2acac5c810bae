"""Plugin session: handshake, capability declaration, serve loop.

The session reads denoise requests until EOF.  Capabilities are sent
exactly once, in reply to the host's hello.  A request larger than the
declared capability gets an error frame and the session continues; a
malformed frame gets an error frame and the session terminates.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import framing
from .fields import RingWaves, make_field
from .geometry import clean_tile

PROTO_VERSION = 1


def ddim_step(tile: np.ndarray, x0: np.ndarray, ab_t: float, ab_prev: float) -> np.ndarray:
    """Deterministic level t -> t-1 step toward the clean signal x0.

    Arithmetic mirrors the host oracle bit-for-bit (float32 coefficients).
    """
    c_signal = np.float32(math.sqrt(ab_prev))
    c_noise = np.float32(math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)))
    c_cur = np.float32(math.sqrt(ab_t))
    return c_signal * x0 + c_noise * (tile - c_cur * x0)


def oracle_callback(default_field=None):
    """Exact-oracle callback; conditioning may carry a target spec override."""
    base = default_field or RingWaves()

    def callback(header: dict, tile: np.ndarray) -> np.ndarray:
        field_obj = base
        cond = header.get("conditioning") or {}
        payload_b64 = cond.get("payload_b64")
        if payload_b64:
            try:
                payload = json.loads(base64.b64decode(payload_b64))
                if isinstance(payload, dict) and "target" in payload:
                    field_obj = make_field(payload["target"])
            except (ValueError, json.JSONDecodeError):
                pass  # opaque payload that is not a target spec
        x0 = clean_tile(field_obj, header["geometry"], tile.shape[1])
        return ddim_step(tile, x0, float(header["alpha_bar_t"]),
                         float(header["alpha_bar_prev"]))

    return callback


def echo_callback(header: dict, tile: np.ndarray) -> np.ndarray:
    return tile


@dataclass
class PluginSession:
    callback: object
    max_window: tuple[int, int] = (1024, 1024)
    max_frames: int = 256
    name: str = "panoweave-reference-plugin"
    capabilities_sent: bool = field(default=False, init=False)

    def capabilities(self) -> dict:
        return {
            "proto": PROTO_VERSION,
            "name": self.name,
            "max_window": list(self.max_window),
            "max_frames": self.max_frames,
            "conditioning": ["payload", "image"],
        }

    def serve(self, reader, writer) -> int:
        """Loop request -> callback -> response until EOF; returns exit code."""
        try:
            hello = framing.read_json(reader)
        except framing.FramingError as exc:
            framing.write_json(writer, {"type": "error", "message": str(exc)})
            return 1
        if hello is None:
            return 0
        if hello.get("proto") != PROTO_VERSION:
            framing.write_json(writer, {
                "type": "error",
                "message": f"unsupported protocol {hello.get('proto')!r}"})
            return 1
        framing.write_json(writer, self.capabilities())
        self.capabilities_sent = True
        while True:
            try:
                header = framing.read_json(reader)
            except framing.FramingError as exc:
                framing.write_json(writer, {"type": "error", "message": str(exc)})
                return 1
            if header is None:
                return 0
            try:
                result = self._handle(header, reader, writer)
            except framing.FramingError as exc:
                framing.write_json(writer, {"type": "error", "message": str(exc)})
                return 1
            if not result:
                return 1

    def _handle(self, header: dict, reader, writer) -> bool:
        if header.get("type") != "denoise":
            framing.write_json(writer, {
                "type": "error", "message": f"unknown request type {header.get('type')!r}"})
            return False
        shape = header.get("shape")
        payload = framing.read_frame(reader)
        if payload is None:
            raise framing.FramingError("stream closed before tensor frame")
        if header.get("dtype") != "f32" or not shape or len(shape) != 4:
            framing.write_json(writer, {
                "type": "error", "message": "request must declare dtype f32 and a 4-D shape"})
            return False
        f, c, h, w = (int(s) for s in shape)
        if f > self.max_frames or w > self.max_window[0] or h > self.max_window[1]:
            # capability violation: report and keep serving
            framing.write_json(writer, {
                "type": "error",
                "message": f"capability violation: shape {shape} exceeds "
                           f"max_window {list(self.max_window)} / max_frames "
                           f"{self.max_frames}"})
            return True
        tile = framing.decode_tensor(payload, (f, c, h, w))
        out = np.ascontiguousarray(self.callback(header, tile), dtype=np.float32)
        if out.shape != tile.shape:
            framing.write_json(writer, {
                "type": "error",
                "message": f"callback returned shape {out.shape}, expected {tile.shape}"})
            return False
        framing.write_json(writer, {"type": "result", "dtype": "f32",
                                    "shape": list(out.shape)})
        framing.write_frame(writer, framing.encode_tensor(out))
        return True
