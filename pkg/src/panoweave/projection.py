"""Sphere geometry: ERP <-> direction mapping and perspective viewports.

Conventions (fixed across the engine):

* Directions are unit vectors with ``x = cos(lat)cos(lon)``,
  ``y = cos(lat)sin(lon)``, ``z = sin(lat)``.
* The ERP rectangle is W = 2H; texel centers map to
  ``lon = -pi + 2*pi*(j+0.5)/W`` and ``lat = pi/2 - pi*(i+0.5)/H``
  (row 0 is the north edge).
* A viewport is a zero-roll pinhole camera: yaw (longitude) then pitch
  (latitude); the vertical field of view follows from square pixels.
* At the poles longitude is reported as 0 (atan2(0, 0) convention).

Reprojection gathers from the ERP side: every texel whose ray falls
inside the image-plane bounds samples the tile bilinearly.  This is
hole-free and makes frustum membership identical in both directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .latent import PanoLatent
from .schedule import NoiseSchedule, SeededRng

__all__ = [
    "ViewportSpec",
    "ErpGrid",
    "DenoisedMask",
    "Footprint",
    "dir_to_lonlat",
    "lonlat_to_dir",
    "viewport_rays",
    "project_erp_to_viewport",
    "viewport_footprint",
    "reproject_viewport_to_erp",
    "reproject_overwrite",
    "rebalance_overlap",
]


def dir_to_lonlat(x, y, z, tol: float = 1e-6):
    """Unit direction -> (longitude, latitude); poles report longitude 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    norm = np.sqrt(x * x + y * y + z * z)
    if np.any(np.abs(norm - 1.0) > tol):
        worst = float(np.max(np.abs(norm - 1.0)))
        raise ValueError(f"direction not unit length (|norm-1| = {worst:.3e} > {tol})")
    lon = np.arctan2(y, x)
    lat = np.arcsin(np.clip(z, -1.0, 1.0))
    if lon.ndim == 0:
        return float(lon), float(lat)
    return lon, lat


def lonlat_to_dir(lon, lat):
    """(longitude, latitude) -> unit direction, inverse of dir_to_lonlat."""
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    cb = np.cos(lat)
    x = cb * np.cos(lon)
    y = cb * np.sin(lon)
    z = np.sin(lat)
    if x.ndim == 0:
        return float(x), float(y), float(z)
    return x, y, z


@dataclass(frozen=True)
class ViewportSpec:
    """Perspective camera on the unit sphere."""

    lon: float                 # center longitude, radians in [-pi, pi)
    lat: float                 # center latitude, radians in [-pi/2, pi/2]
    fov: float                 # horizontal field of view, radians
    out_size: tuple[int, int]  # (width, height) in pixels

    def __post_init__(self):
        if not (0.0 < self.fov < math.pi):
            raise ValueError(f"fov must lie in (0, pi), got {self.fov}")
        w, h = self.out_size
        if w <= 0 or h <= 0:
            raise ValueError(f"out_size must be positive, got {self.out_size}")
        if not (-math.pi / 2 - 1e-12 <= self.lat <= math.pi / 2 + 1e-12):
            raise ValueError(f"latitude {self.lat} outside [-pi/2, pi/2]")

    @property
    def fov_v(self) -> float:
        """Vertical fov for square pixels."""
        w, h = self.out_size
        return 2.0 * math.atan(math.tan(self.fov / 2.0) * h / w)

    def basis(self):
        """(forward, right, up) world-frame unit vectors; roll is zero."""
        ca, sa = math.cos(self.lon), math.sin(self.lon)
        cb, sb = math.cos(self.lat), math.sin(self.lat)
        forward = np.array([cb * ca, cb * sa, sb])
        right = np.array([-sa, ca, 0.0])
        up = np.array([-sb * ca, -sb * sa, cb])
        return forward, right, up


@dataclass(frozen=True)
class ErpGrid:
    """Equirectangular raster; width must be exactly twice the height."""

    width: int
    height: int

    def __post_init__(self):
        if self.width != 2 * self.height:
            raise ValueError(
                f"ERP width must equal twice height, got {self.width}x{self.height}")


@lru_cache(maxsize=8)
def _erp_texel_dirs(height: int, width: int):
    """Unit direction of every ERP texel center, shape (3, H*W)."""
    lon = -np.pi + 2.0 * np.pi * (np.arange(width) + 0.5) / width
    lat = np.pi / 2.0 - np.pi * (np.arange(height) + 0.5) / height
    lon_g, lat_g = np.meshgrid(lon, lat)
    x, y, z = lonlat_to_dir(lon_g.ravel(), lat_g.ravel())
    return np.stack([x, y, z])


@lru_cache(maxsize=64)
def _viewport_ray_grids(vp: ViewportSpec):
    """Per-pixel (lon, lat) of the viewport's rays, each (H, W) float64."""
    w, h = vp.out_size
    tan_h = math.tan(vp.fov / 2.0)
    tan_v = math.tan(vp.fov_v / 2.0)
    xc = ((2.0 * np.arange(w) + 1.0) / w - 1.0) * tan_h
    yc = ((2.0 * np.arange(h) + 1.0) / h - 1.0) * tan_v
    fwd, right, up = vp.basis()
    d = (fwd[:, None, None]
         + right[:, None, None] * xc[None, None, :]
         - up[:, None, None] * yc[None, :, None])
    d = d / np.linalg.norm(d, axis=0, keepdims=True)
    lon = np.arctan2(d[1], d[0])
    lat = np.arcsin(np.clip(d[2], -1.0, 1.0))
    return lon, lat


def viewport_rays(vp: ViewportSpec):
    return _viewport_ray_grids(vp)


def _lonlat_to_erp_pix(lon, lat, height: int, width: int):
    xpix = (lon + np.pi) / (2.0 * np.pi) * width - 0.5
    ypix = (np.pi / 2.0 - lat) / np.pi * height - 0.5
    return xpix, ypix


def project_erp_to_viewport(erp: PanoLatent, vp: ViewportSpec,
                            sampler: str = "bilinear",
                            frame_indices=None) -> np.ndarray:
    """Resample an ERP latent into the viewport; returns (F, C, H, W) tile.

    `frame_indices` selects (possibly ring-wrapped) frames; sampling runs
    per frame so no copy of the full ERP is ever made.
    """
    if sampler != "bilinear":
        raise ValueError(f"unsupported sampler {sampler!r}")
    if not erp.h_ring:
        raise ValueError("ERP latent must have h_ring=true (longitude wraps)")
    ErpGrid(erp.width, erp.height)
    lon, lat = _viewport_ray_grids(vp)
    xpix, ypix = _lonlat_to_erp_pix(lon, lat, erp.height, erp.width)
    xs, ys = xpix.ravel(), ypix.ravel()
    if frame_indices is None:
        frame_indices = np.arange(erp.frames)
    fi = np.asarray(frame_indices, dtype=np.intp)
    w, h = vp.out_size
    c = erp.channels
    out = np.empty((fi.size, c, h, w), dtype=np.float32)
    for k, f in enumerate(fi):
        out[k] = kernels.bilinear_pano_sample(erp.data[f], xs, ys).reshape(c, h, w)
    return out


@dataclass(frozen=True)
class Footprint:
    """ERP texels inside a viewport frustum, with their image-plane coords."""

    mask: np.ndarray     # (H, W) bool
    plane_x: np.ndarray  # tile pixel x of each masked texel, C-order
    plane_y: np.ndarray


@lru_cache(maxsize=64)
def _footprint_cached(vp: ViewportSpec, height: int, width: int) -> Footprint:
    dirs = _erp_texel_dirs(height, width)
    fwd, right, up = vp.basis()
    t_f = fwd @ dirs
    t_r = right @ dirs
    t_u = up @ dirs
    tan_h = math.tan(vp.fov / 2.0)
    tan_v = math.tan(vp.fov_v / 2.0)
    front = t_f > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = np.where(front, t_r / t_f, np.inf)
        yc = np.where(front, -t_u / t_f, np.inf)
    inside = front & (np.abs(xc) <= tan_h) & (np.abs(yc) <= tan_v)
    w, h = vp.out_size
    px = (xc[inside] / tan_h + 1.0) * w / 2.0 - 0.5
    py = (yc[inside] / tan_v + 1.0) * h / 2.0 - 0.5
    return Footprint(mask=inside.reshape(height, width), plane_x=px, plane_y=py)


def viewport_footprint(vp: ViewportSpec, height: int, width: int) -> Footprint:
    return _footprint_cached(vp, height, width)


@dataclass
class DenoisedMask:
    """Per-frame, per-texel record of regions already advanced this step."""

    data: np.ndarray  # (F, H, W) bool

    @classmethod
    def empty(cls, frames: int, height: int, width: int) -> "DenoisedMask":
        return cls(np.zeros((frames, height, width), dtype=bool))

    def reset(self) -> None:
        self.data[:] = False


def _scatter_index(latent: PanoLatent, fp: Footprint, frame_indices):
    """Advanced-index tuple addressing (len(frames), C, n_covered) elements."""
    if frame_indices is None:
        frame_indices = np.arange(latent.frames)
    fi = np.asarray(frame_indices, dtype=np.intp)
    iy, ix = np.nonzero(fp.mask)
    return (fi[:, None, None], np.arange(latent.channels)[None, :, None],
            iy[None, None, :], ix[None, None, :]), fi, iy, ix


def reproject_viewport_to_erp(tile: np.ndarray, vp: ViewportSpec,
                              value_acc: PanoLatent, weight_acc: PanoLatent,
                              mask: DenoisedMask,
                              frame_indices=None) -> None:
    """Gather tile values onto covered ERP texels, accumulating weight 1."""
    fp = viewport_footprint(vp, value_acc.height, value_acc.width)
    values = _sample_tile(tile, fp)
    idx, fi, iy, ix = _scatter_index(value_acc, fp, frame_indices)
    value_acc.data[idx] += values
    weight_acc.data[idx] += 1.0
    mask.data[fi[:, None], iy[None, :], ix[None, :]] = True


def reproject_overwrite(tile: np.ndarray, vp: ViewportSpec, erp: PanoLatent,
                        mask: DenoisedMask,
                        frame_indices=None) -> None:
    """Overwrite covered ERP texels with tile values (later window wins)."""
    fp = viewport_footprint(vp, erp.height, erp.width)
    values = _sample_tile(tile, fp)
    idx, fi, iy, ix = _scatter_index(erp, fp, frame_indices)
    erp.data[idx] = values
    mask.data[fi[:, None], iy[None, :], ix[None, :]] = True


def _sample_tile(tile: np.ndarray, fp: Footprint) -> np.ndarray:
    f, c, h, w = tile.shape
    stack = tile.reshape(f * c, h, w)
    out = kernels.bilinear_plane_sample(stack, fp.plane_x, fp.plane_y)
    return out.reshape(f, c, -1)


def rebalance_overlap(erp: PanoLatent, mask: np.ndarray, schedule: NoiseSchedule,
                      t: int, rng: SeededRng) -> PanoLatent:
    """Renoise masked texels back to level t (already-denoised overlap).

    Modifies `erp` in place and returns it; unmasked texels are untouched.
    """
    if not 1 <= t <= schedule.steps:
        raise ValueError(f"step {t} outside [1, {schedule.steps}]")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (erp.frames, erp.height, erp.width):
        raise ValueError(f"mask shape {mask.shape} != (F, H, W)")
    n = int(mask.sum())
    if n == 0:
        return erp
    ab = float(schedule.alpha_bar[t])
    sa = np.float32(math.sqrt(ab))
    sb = np.float32(math.sqrt(1.0 - ab))
    eps = rng.standard_normal((erp.channels, n), dtype=np.float32)
    fi, yi, xi = np.nonzero(mask)
    for c in range(erp.channels):
        vals = erp.data[fi, c, yi, xi]
        erp.data[fi, c, yi, xi] = sa * vals + sb * eps[c]
    return erp
