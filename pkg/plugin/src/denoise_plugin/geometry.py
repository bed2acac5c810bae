"""Window geometry decoding: wire dicts to world-coordinate grids.

The coordinate conventions mirror the host engine exactly: texel centers
at (i + 0.5) / N, ring axes wrap by modulo, viewports are zero-roll
yaw/pitch pinhole cameras with square pixels.
"""

from __future__ import annotations

import math

import numpy as np


def frame_centers(start: int, length: int, total: int) -> np.ndarray:
    idx = (start + np.arange(length, dtype=np.float64)) % total
    return (idx + 0.5) / total


def viewport_rays(lon0: float, lat0: float, fov: float, out_size):
    """Per-pixel (lon, lat) grids of a viewport's rays, each (H, W)."""
    w, h = out_size
    tan_h = math.tan(fov / 2.0)
    fov_v = 2.0 * math.atan(math.tan(fov / 2.0) * h / w)
    tan_v = math.tan(fov_v / 2.0)
    xc = ((2.0 * np.arange(w) + 1.0) / w - 1.0) * tan_h
    yc = ((2.0 * np.arange(h) + 1.0) / h - 1.0) * tan_v
    ca, sa = math.cos(lon0), math.sin(lon0)
    cb, sb = math.cos(lat0), math.sin(lat0)
    fwd = np.array([cb * ca, cb * sa, sb])
    right = np.array([-sa, ca, 0.0])
    up = np.array([-sb * ca, -sb * sa, cb])
    d = (fwd[:, None, None]
         + right[:, None, None] * xc[None, None, :]
         - up[:, None, None] * yc[None, :, None])
    d = d / np.linalg.norm(d, axis=0, keepdims=True)
    lon = np.arctan2(d[1], d[0])
    lat = np.arcsin(np.clip(d[2], -1.0, 1.0))
    return lon, lat


def world_grids(geom: dict):
    """Wire geometry -> (kind, frame grid, vertical grid, horizontal grid)."""
    kind = geom.get("kind")
    if kind == "pano":
        fs, fl, rs, rl, cs, cl = geom["region"]
        frames, height, width = geom["pano_size"]
        f = frame_centers(fs, fl, frames)[:, None, None]
        y = ((rs + np.arange(rl, dtype=np.float64) + 0.5) / height)[None, :, None]
        x = (((cs + np.arange(cl, dtype=np.float64)) % width + 0.5)
             / width)[None, None, :]
        return "pano", f, y, x
    if kind == "viewport":
        lon, lat = viewport_rays(float(geom["lon"]), float(geom["lat"]),
                                 float(geom["fov"]), geom["out_size"])
        f = frame_centers(int(geom["frame_start"]), int(geom["frame_len"]),
                          int(geom["total_frames"]))[:, None, None]
        return "sphere", f, lat[None, :, :], lon[None, :, :]
    raise ValueError(f"unknown geometry kind {kind!r}")


def clean_tile(field, geom: dict, channels: int) -> np.ndarray:
    kind, f, a, b = world_grids(geom)
    if kind == "pano":
        frames, h, w = f.shape[0], a.shape[1], b.shape[2]
    else:
        frames, h, w = f.shape[0], a.shape[1], a.shape[2]
    out = np.empty((frames, channels, h, w), dtype=np.float32)
    for c in range(channels):
        out[:, c] = field.pano(f, a, b, c) if kind == "pano" else field.sphere(f, b, a, c)
    return out
