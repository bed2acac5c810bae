"""Denoiser interface, closed-form oracles, and the plugin host bridge.

Every denoiser advances a window tile from noise level t to t-1.  The
oracles make runs exactly checkable: the clean signal is a world field
evaluated at the window's world coordinates, so the correct output is
known in closed form regardless of how the panorama was windowed.

Steps are deterministic (DDIM-style, eta = 0):

    out = sqrt(ab[t-1]) * x0
        + sqrt((1 - ab[t-1]) / (1 - ab[t])) * (tile - sqrt(ab[t]) * x0)

With ab[0] = 1 the final step collapses to x0 exactly.
"""

from __future__ import annotations

import base64
import math
import queue
import threading
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import PipelineError, ProtocolError
from .latent import TileRegion
from .projection import ViewportSpec, viewport_rays
from .protocol import PluginChannel
from .schedule import NoiseSchedule

__all__ = [
    "PanoWindow", "SphereWindow", "Conditioning",
    "DenoiseRequest", "DenoiseResponse",
    "DiracOracle", "SmoothingMock", "EchoDenoiser", "PluginDenoiser",
    "geometry_to_wire", "geometry_from_wire",
]


@dataclass(frozen=True)
class PanoWindow:
    """A tile region located inside a panorama of known size/topology."""

    region: TileRegion
    frames: int
    height: int
    width: int
    h_ring: bool = True
    t_ring: bool = False


@dataclass(frozen=True)
class SphereWindow:
    """A perspective viewport plus the frame clip it covers."""

    viewport: ViewportSpec
    frame_start: int
    frame_len: int
    total_frames: int
    t_ring: bool = False


@dataclass(frozen=True)
class Conditioning:
    """Opaque payload forwarded to plugins; the engine never interprets it."""

    payload: bytes | None = None
    image_tile: np.ndarray | None = None


@dataclass
class DenoiseRequest:
    t: int
    geometry: PanoWindow | SphereWindow
    tile: np.ndarray  # (F, C, H, W) float32
    conditioning: Conditioning | None = None


@dataclass
class DenoiseResponse:
    tile: np.ndarray


def _frame_centers(start: int, length: int, total: int) -> np.ndarray:
    idx = (start + np.arange(length, dtype=np.float64)) % total
    return (idx + 0.5) / total


def _world_grids(geom: PanoWindow | SphereWindow):
    """Normalized world coordinates of every tile element (channel-free)."""
    if isinstance(geom, PanoWindow):
        r = geom.region
        f = _frame_centers(r.frame_start, r.frame_len, geom.frames)[:, None, None]
        y = ((r.row_start + np.arange(r.row_len, dtype=np.float64) + 0.5)
             / geom.height)[None, :, None]
        x = (((r.col_start + np.arange(r.col_len, dtype=np.float64)) % geom.width + 0.5)
             / geom.width)[None, None, :]
        return "pano", f, y, x
    lon, lat = viewport_rays(geom.viewport)
    f = _frame_centers(geom.frame_start, geom.frame_len, geom.total_frames)[:, None, None]
    return "sphere", f, lat[None, :, :], lon[None, :, :]


def clean_tile(field, geom: PanoWindow | SphereWindow, channels: int) -> np.ndarray:
    """Evaluate the world field over the window, shape (F, C, H, W) float32."""
    kind, f, a, b = _world_grids(geom)
    if kind == "pano":
        frames, h, w = f.shape[0], a.shape[1], b.shape[2]
    else:
        frames, h, w = f.shape[0], a.shape[1], a.shape[2]
    out = np.empty((frames, channels, h, w), dtype=np.float32)
    for c in range(channels):
        out[:, c] = field.pano(f, a, b, c) if kind == "pano" else field.sphere(f, b, a, c)
    return out


def _ddim_coeffs(schedule: NoiseSchedule, t: int):
    if not 1 <= t <= schedule.steps:
        raise ValueError(f"step {t} outside [1, {schedule.steps}]")
    ab_t = float(schedule.alpha_bar[t])
    ab_prev = float(schedule.alpha_bar[t - 1])
    c_signal = np.float32(math.sqrt(ab_prev))
    c_noise = np.float32(math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)))
    c_cur = np.float32(math.sqrt(ab_t))
    return c_signal, c_noise, c_cur


def validate_response(resp: DenoiseResponse, req: DenoiseRequest) -> DenoiseResponse:
    if resp.tile.shape != req.tile.shape:
        raise PipelineError(f"denoiser returned shape {resp.tile.shape}, "
                            f"expected {req.tile.shape}")
    if not np.isfinite(resp.tile).all():
        bad = int(np.argmin(np.isfinite(resp.tile).ravel()))
        raise PipelineError(f"non-finite value at flat index {bad} in denoiser response")
    return resp


class DiracOracle:
    """Deterministic step toward a known clean signal; exact after T steps."""

    def __init__(self, field, schedule: NoiseSchedule):
        self.field = field
        self.schedule = schedule

    def step(self, req: DenoiseRequest) -> DenoiseResponse:
        c_signal, c_noise, c_cur = _ddim_coeffs(self.schedule, req.t)
        x0 = clean_tile(self.field, req.geometry, req.tile.shape[1])
        out = c_signal * x0 + c_noise * (req.tile - c_cur * x0)
        return DenoiseResponse(tile=out)


class SmoothingMock:
    """Dirac step with a neighborhood-coupled error term.

    The clean-signal estimate is perturbed by a box-filtered copy of the
    tile's normalized noise residual.  The filter clamps at the tile
    edge, so a window boundary that never moves imprints a persistent
    seam — which is exactly what this mock exists to demonstrate.  With
    radius 0 there is no coupling and the step reduces to DiracOracle.
    Fully deterministic: no RNG is involved.
    """

    def __init__(self, field, schedule: NoiseSchedule, radius: int = 2,
                 structure_mix: float = 0.6):
        self.field = field
        self.schedule = schedule
        self.radius = int(radius)
        self.structure_mix = float(structure_mix)

    def step(self, req: DenoiseRequest) -> DenoiseResponse:
        c_signal, c_noise, c_cur = _ddim_coeffs(self.schedule, req.t)
        x0 = clean_tile(self.field, req.geometry, req.tile.shape[1])
        if self.radius > 0:
            ab_t = float(self.schedule.alpha_bar[req.t])
            resid = (req.tile - c_cur * x0) / np.float32(math.sqrt(1.0 - ab_t))
            size = 2 * self.radius + 1
            smooth = uniform_filter(resid, size=(size, 1, size, size), mode="nearest")
            x0 = x0 + np.float32(self.structure_mix) * smooth
        out = c_signal * x0 + c_noise * (req.tile - c_cur * x0)
        return DenoiseResponse(tile=out)


class EchoDenoiser:
    """Returns the tile unchanged (protocol and plumbing tests)."""

    def __init__(self, schedule: NoiseSchedule):
        self.schedule = schedule

    def step(self, req: DenoiseRequest) -> DenoiseResponse:
        return DenoiseResponse(tile=req.tile.copy())


def geometry_to_wire(geom: PanoWindow | SphereWindow) -> dict:
    if isinstance(geom, PanoWindow):
        r = geom.region
        return {"kind": "pano",
                "region": [r.frame_start, r.frame_len, r.row_start, r.row_len,
                           r.col_start, r.col_len],
                "pano_size": [geom.frames, geom.height, geom.width],
                "h_ring": geom.h_ring, "t_ring": geom.t_ring}
    vp = geom.viewport
    return {"kind": "viewport", "lon": vp.lon, "lat": vp.lat, "fov": vp.fov,
            "out_size": list(vp.out_size),
            "frame_start": geom.frame_start, "frame_len": geom.frame_len,
            "total_frames": geom.total_frames, "t_ring": geom.t_ring}


def geometry_from_wire(obj: dict) -> PanoWindow | SphereWindow:
    if obj.get("kind") == "pano":
        fs, fl, rs, rl, cs, cl = obj["region"]
        f, h, w = obj["pano_size"]
        return PanoWindow(region=TileRegion(fs, fl, rs, rl, cs, cl),
                          frames=f, height=h, width=w,
                          h_ring=bool(obj.get("h_ring", True)),
                          t_ring=bool(obj.get("t_ring", False)))
    if obj.get("kind") == "viewport":
        vp = ViewportSpec(lon=float(obj["lon"]), lat=float(obj["lat"]),
                          fov=float(obj["fov"]), out_size=tuple(obj["out_size"]))
        return SphereWindow(viewport=vp, frame_start=int(obj["frame_start"]),
                            frame_len=int(obj["frame_len"]),
                            total_frames=int(obj["total_frames"]),
                            t_ring=bool(obj.get("t_ring", False)))
    raise ProtocolError(f"unknown geometry kind {obj.get('kind')!r}")


def _conditioning_to_wire(cond: Conditioning | None):
    if cond is None:
        return None
    out = {}
    if cond.payload is not None:
        out["payload_b64"] = base64.b64encode(cond.payload).decode("ascii")
    if cond.image_tile is not None:
        img = np.ascontiguousarray(cond.image_tile, dtype="<f4")
        out["image_shape"] = list(img.shape)
        out["image_b64"] = base64.b64encode(img.tobytes()).decode("ascii")
    return out or None


class PluginDenoiser:
    """Host bridge: ships windows to an external plugin over the wire protocol."""

    def __init__(self, command: str | list[str], schedule: NoiseSchedule,
                 pool_size: int = 1, timeout: float | None = 30.0,
                 env: dict | None = None):
        self.schedule = schedule
        self.command = command
        self._pool: queue.Queue[PluginChannel] = queue.Queue()
        self._lock = threading.Lock()
        self._channels = []
        for _ in range(max(1, pool_size)):
            ch = PluginChannel(command, timeout=timeout, env=env)
            self._channels.append(ch)
            self._pool.put(ch)

    @property
    def capabilities(self) -> dict:
        return self._channels[0].capabilities

    def step(self, req: DenoiseRequest) -> DenoiseResponse:
        header = {
            "type": "denoise",
            "t": int(req.t),
            "alpha_bar_t": float(self.schedule.alpha_bar[req.t]),
            "alpha_bar_prev": float(self.schedule.alpha_bar[req.t - 1]),
            "dtype": "f32",
            "shape": list(req.tile.shape),
            "geometry": geometry_to_wire(req.geometry),
            "conditioning": _conditioning_to_wire(req.conditioning),
        }
        ch = self._pool.get()
        try:
            out = ch.denoise(header, req.tile)
        finally:
            self._pool.put(ch)
        if not np.isfinite(out).all():
            bad = int(np.argmin(np.isfinite(out).ravel()))
            raise ProtocolError(f"non-finite value at index {bad} in plugin response")
        return DenoiseResponse(tile=out)

    def close(self) -> None:
        for ch in self._channels:
            ch.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
