"""Closed-form world fields used as oracle-denoiser targets.

A field is a deterministic clean signal defined over world coordinates,
independent of any window decomposition — which is what makes tiled runs
exactly checkable.  Two coordinate systems are supported:

* pano:   normalized (frame, y, x) in [0, 1), texel-center convention;
* sphere: normalized frame plus (longitude, latitude) in radians.

Fields are evaluated in float64 and cast to float32 at the end.  The
reference plugin mirrors these formulas; keep the expressions in sync.
"""

from __future__ import annotations

import numpy as np

__all__ = ["RingWaves", "SpherePoly", "make_field", "eval_pano_field", "eval_erp_field"]


class RingWaves:
    """Smooth separable waves, periodic along x and frame (ring-safe)."""

    name = "ring-waves"

    def __init__(self, kx: int = 2, ky: int = 1, kf: int = 1, amp: float = 1.0):
        self.kx = int(kx)
        self.ky = int(ky)
        self.kf = int(kf)
        self.amp = float(amp)

    def pano(self, f, y, x, c: int):
        phase = 2.0 * np.pi * (self.kx * x + self.ky * y + self.kf * f)
        return (self.amp * np.sin(phase + 0.25 * np.pi * c)).astype(np.float32)

    def sphere(self, f, lon, lat, c: int):
        # interpret the ERP rectangle as the pano plane
        x = (lon + np.pi) / (2.0 * np.pi)
        y = 0.5 - lat / np.pi
        return self.pano(f, y, x, c)

    def spec(self) -> dict:
        return {"name": self.name, "kx": self.kx, "ky": self.ky,
                "kf": self.kf, "amp": self.amp}


class SpherePoly:
    """Low-order polynomial in the unit direction — smooth across the poles."""

    name = "sphere-poly"

    def __init__(self, motion: float = 0.4):
        self.motion = float(motion)

    def sphere(self, f, lon, lat, c: int):
        cb = np.cos(lat)
        dx = cb * np.cos(lon)
        dy = cb * np.sin(lon)
        dz = np.sin(lat)
        v = 1.2 * dx * dy + 0.7 * dz + 0.3 * dx \
            + self.motion * np.sin(2.0 * np.pi * f + 0.5 * np.pi * c) * dy
        return np.asarray(v, dtype=np.float32)

    def pano(self, f, y, x, c: int):
        lon = 2.0 * np.pi * x - np.pi
        lat = np.pi * (0.5 - y)
        return self.sphere(f, lon, lat, c)

    def spec(self) -> dict:
        return {"name": self.name, "motion": self.motion}


_FIELDS = {RingWaves.name: RingWaves, SpherePoly.name: SpherePoly}


def make_field(spec: dict):
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in _FIELDS:
        raise ValueError(f"unknown target field {name!r}; choose from {sorted(_FIELDS)}")
    return _FIELDS[name](**spec)


def _axis_centers(n: int) -> np.ndarray:
    return (np.arange(n, dtype=np.float64) + 0.5) / n


def eval_pano_field(field, frames: int, channels: int, height: int, width: int) -> np.ndarray:
    """Reference (F, C, H, W) evaluation on the pano texel grid."""
    f = _axis_centers(frames)[:, None, None]
    y = _axis_centers(height)[None, :, None]
    x = _axis_centers(width)[None, None, :]
    out = np.empty((frames, channels, height, width), dtype=np.float32)
    for c in range(channels):
        out[:, c] = field.pano(f, y, x, c)
    return out


def eval_erp_field(field, frames: int, channels: int, height: int, width: int) -> np.ndarray:
    """Reference evaluation at ERP texel-center directions."""
    f = _axis_centers(frames)[:, None, None]
    lon = (-np.pi + 2.0 * np.pi * _axis_centers(width))[None, None, :]
    lat = (np.pi / 2.0 - np.pi * _axis_centers(height))[None, :, None]
    out = np.empty((frames, channels, height, width), dtype=np.float32)
    for c in range(channels):
        out[:, c] = field.sphere(f, lon, lat, c)
    return out
