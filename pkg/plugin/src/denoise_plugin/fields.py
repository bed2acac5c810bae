"""Closed-form target fields.

These mirror the host engine's oracle targets expression-for-expression
(float64 math, float32 cast) so an oracle served over the wire is
bit-identical to the host's in-process oracle.  Keep in sync with the
engine's targets module.
"""

from __future__ import annotations

import numpy as np


class RingWaves:
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
        x = (lon + np.pi) / (2.0 * np.pi)
        y = 0.5 - lat / np.pi
        return self.pano(f, y, x, c)


class SpherePoly:
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


_FIELDS = {RingWaves.name: RingWaves, SpherePoly.name: SpherePoly}


def make_field(spec: dict):
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in _FIELDS:
        raise ValueError(f"unknown target field {name!r}")
    return _FIELDS[name](**spec)
