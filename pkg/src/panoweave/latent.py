"""Panoramic latent buffers and ring-aware tile access.

A :class:`PanoLatent` is a dense float32 buffer of shape
``(frames, channels, height, width)``.  The width axis may be a ring
(left/right edges identified) and the frame axis may be a ring (loopable
video); rows never wrap.  Tiles are addressed by :class:`TileRegion`,
whose column/frame start may run off the edge of a ring axis — indices
are taken modulo the extent.

The on-disk dump format ("PWLT") is a 32-byte header followed by the raw
little-endian float32 stream in frame-major (F, C, H, W) element order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import BoundsError, CoverageError

__all__ = [
    "PanoLatent",
    "TileRegion",
    "extract_tile",
    "insert_tile",
    "blend_insert",
    "finalize_blend",
    "write_pwlt",
    "read_pwlt",
]


@dataclass
class PanoLatent:
    """Dense (F, C, H, W) float32 buffer with optional ring topology."""

    data: np.ndarray
    h_ring: bool = False
    t_ring: bool = False

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 4:
            raise ValueError(f"latent must be 4-D (F,C,H,W), got shape {arr.shape}")
        self.data = arr

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @classmethod
    def zeros(cls, frames: int, channels: int, height: int, width: int,
              h_ring: bool = False, t_ring: bool = False) -> "PanoLatent":
        return cls(np.zeros((frames, channels, height, width), dtype=np.float32),
                   h_ring=h_ring, t_ring=t_ring)

    def copy(self) -> "PanoLatent":
        return PanoLatent(self.data.copy(), h_ring=self.h_ring, t_ring=self.t_ring)

    def like(self, data: np.ndarray) -> "PanoLatent":
        """Same topology, new data (must match shape)."""
        if data.shape != self.data.shape:
            raise ValueError(f"shape {data.shape} != latent shape {self.data.shape}")
        return PanoLatent(data, h_ring=self.h_ring, t_ring=self.t_ring)


@dataclass(frozen=True)
class TileRegion:
    """A tile address. Starts on ring axes may be negative or >= extent."""

    frame_start: int
    frame_len: int
    row_start: int
    row_len: int
    col_start: int
    col_len: int

    def __post_init__(self):
        if self.frame_len <= 0 or self.row_len <= 0 or self.col_len <= 0:
            raise ValueError(f"region lengths must be positive: {self}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.frame_len, self.row_len, self.col_len)

    def with_frames(self, frame_start: int, frame_len: int) -> "TileRegion":
        return replace(self, frame_start=frame_start, frame_len=frame_len)


def _axis_indices(start: int, length: int, extent: int, ring: bool, axis: str) -> np.ndarray:
    if ring:
        return (start + np.arange(length)) % extent
    if start < 0 or start + length > extent:
        raise BoundsError(
            f"{axis} range [{start}, {start + length}) outside [0, {extent}) on a non-ring axis"
        )
    return np.arange(start, start + length)


def _region_indices(latent: PanoLatent, region: TileRegion):
    if region.row_len > latent.height or region.col_len > latent.width \
            or region.frame_len > latent.frames:
        raise BoundsError(f"region {region} larger than latent "
                          f"{(latent.frames, latent.height, latent.width)}")
    f_idx = _axis_indices(region.frame_start, region.frame_len, latent.frames,
                          latent.t_ring, "frame")
    r_idx = _axis_indices(region.row_start, region.row_len, latent.height,
                          False, "row")
    c_idx = _axis_indices(region.col_start, region.col_len, latent.width,
                          latent.h_ring, "column")
    return np.ix_(f_idx, np.arange(latent.channels), r_idx, c_idx)


def extract_tile(latent: PanoLatent, region: TileRegion) -> np.ndarray:
    """Copy a (frame_len, C, row_len, col_len) tile out of the latent."""
    return latent.data[_region_indices(latent, region)].copy()


def insert_tile(latent: PanoLatent, region: TileRegion, tile: np.ndarray) -> PanoLatent:
    """Write `tile` into `region`, the exact inverse of extract_tile."""
    expected = (region.frame_len, latent.channels, region.row_len, region.col_len)
    if tuple(tile.shape) != expected:
        raise ValueError(f"tile shape {tile.shape} does not match region shape {expected}")
    latent.data[_region_indices(latent, region)] = tile
    return latent


def blend_insert(value_acc: PanoLatent, region: TileRegion, tile: np.ndarray,
                 weight_acc: PanoLatent) -> None:
    """Accumulate `tile` (and unit weight) over `region`.

    Overlapping writes are resolved later by :func:`finalize_blend`.
    """
    if weight_acc.data.shape != value_acc.data.shape:
        raise ValueError("weight accumulator shape does not match value accumulator")
    expected = (region.frame_len, value_acc.channels, region.row_len, region.col_len)
    if tuple(tile.shape) != expected:
        raise ValueError(f"tile shape {tile.shape} does not match region shape {expected}")
    idx = _region_indices(value_acc, region)
    value_acc.data[idx] += tile
    weight_acc.data[idx] += 1.0


def finalize_blend(value_acc: PanoLatent, weight_acc: PanoLatent) -> PanoLatent:
    """Divide value by weight; every element must have been written at least once."""
    w = weight_acc.data
    if np.any(w == 0.0):
        flat = int(np.argmax(w == 0.0))
        pos = np.unravel_index(flat, w.shape)
        raise CoverageError(f"blend finalize: zero weight at (f,c,h,w)={pos} — plan bug")
    return value_acc.like(value_acc.data / w)


_PWLT_MAGIC = b"PWLT"
_PWLT_VERSION = 1
# magic, version, F, C, H, W, h_ring byte, t_ring byte, 6 pad bytes = 32 bytes
_PWLT_HEADER = struct.Struct("<4sIIIIIBB6x")


def write_pwlt(path, latent: PanoLatent) -> None:
    header = _PWLT_HEADER.pack(
        _PWLT_MAGIC, _PWLT_VERSION,
        latent.frames, latent.channels, latent.height, latent.width,
        int(latent.h_ring), int(latent.t_ring),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(latent.data, dtype="<f4").tobytes())


def read_pwlt(path) -> PanoLatent:
    with open(path, "rb") as fh:
        header = fh.read(_PWLT_HEADER.size)
        if len(header) < _PWLT_HEADER.size:
            raise ValueError("truncated PWLT header")
        magic, version, f, c, h, w, h_ring, t_ring = _PWLT_HEADER.unpack(header)
        if magic != _PWLT_MAGIC:
            raise ValueError(f"bad PWLT magic {magic!r}")
        if version != _PWLT_VERSION:
            raise ValueError(f"unsupported PWLT version {version}")
        payload = fh.read(f * c * h * w * 4)
        if len(payload) != f * c * h * w * 4:
            raise ValueError("truncated PWLT payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(f, c, h, w)
    return PanoLatent(data.copy(), h_ring=bool(h_ring), t_ring=bool(t_ring))
