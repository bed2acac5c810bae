"""Per-step window decompositions: spatial, angular, and temporal.

Exclusive-mode plans partition the latent exactly: every window carries a
full-size *read* region (the denoiser always sees full context) and an
*exclusive write* region.  Interior windows write everything they read;
windows clamped at a non-ring boundary ("padding windows") write only
the strip the shifted interior windows left uncovered.  On a ring axis
windows wrap instead, and the last window's write is truncated when the
extent is not a multiple of the window size.

Blended (warm-up) plans lay overlapping windows on a sub-window stride;
the pipeline resolves overlap by weighted averaging.

Offsets advance by (step * delta) mod window_size, so window edges never
sit at the same place on consecutive steps.  `step` counts completed
denoising steps, i.e. 0 is the first step the sampler runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import CoverageError
from .latent import TileRegion
from .projection import ViewportSpec

__all__ = [
    "SpatialPlanConfig",
    "Window",
    "StepPlan",
    "plan_spatial_step",
    "plan_viewport_step",
    "plan_temporal_step",
    "default_delta",
]

TWO_PI = 2.0 * math.pi


def default_delta(window: int, fraction: int = 4) -> int:
    """Default per-step shift: a quarter window (half for the frame axis)."""
    return min(max(1, window // fraction), window - 1)


@dataclass(frozen=True)
class SpatialPlanConfig:
    pano_w: int
    pano_h: int
    window_w: int
    window_h: int
    h_ring: bool = True
    delta_x: int | None = None     # defaults to window_w // 4
    delta_y: int | None = None     # defaults to window_h // 4
    warmup_steps: int = 0          # K: blended-overlap steps at the start
    warmup_divisor: int = 2        # stride = window / divisor during warm-up

    def __post_init__(self):
        if self.window_w > self.pano_w or self.window_h > self.pano_h:
            raise ValueError(f"window {self.window_w}x{self.window_h} exceeds "
                             f"panorama {self.pano_w}x{self.pano_h}")
        object.__setattr__(self, "delta_x",
                           default_delta(self.window_w) if self.delta_x is None else self.delta_x)
        object.__setattr__(self, "delta_y",
                           default_delta(self.window_h) if self.delta_y is None else self.delta_y)
        if not 0 <= self.delta_x < self.window_w:
            raise ValueError(f"delta_x must lie in [0, window_w), got {self.delta_x}")
        if not 0 <= self.delta_y < self.window_h:
            raise ValueError(f"delta_y must lie in [0, window_h), got {self.delta_y}")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.warmup_divisor < 1:
            raise ValueError("warmup_divisor must be >= 1")


@dataclass(frozen=True)
class Window:
    """A denoisable tile: full-context read region plus exclusive write."""

    read: TileRegion
    write: TileRegion


@dataclass(frozen=True)
class StepPlan:
    step: int
    mode: str                      # "exclusive" | "blended"
    windows: tuple[Window, ...]
    offset: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class _Span:
    read_start: int
    read_len: int
    write_start: int
    write_len: int


def _exclusive_axis(extent: int, size: int, offset: int, ring: bool) -> list[_Span]:
    """1-D exact partition by write regions; reads are always full windows."""
    if size == extent and not ring and offset == 0:
        return [_Span(0, size, 0, size)]
    spans: list[_Span] = []
    if ring:
        count = math.ceil(extent / size)
        for i in range(count):
            start = (offset + i * size) % extent
            wlen = size if i < count - 1 else extent - (count - 1) * size
            spans.append(_Span(start, size, start, wlen))
    else:
        if offset > 0:
            spans.append(_Span(0, size, 0, offset))
        interior = (extent - offset) // size
        for i in range(interior):
            start = offset + i * size
            spans.append(_Span(start, size, start, size))
        end = offset + interior * size
        if end < extent:
            spans.append(_Span(extent - size, size, end, extent - end))
    assert sum(s.write_len for s in spans) == extent
    return spans


def _blended_axis(extent: int, size: int, offset: int, stride: int, ring: bool) -> list[_Span]:
    """1-D overlapping cover; write == read, resolved by averaging."""
    stride = max(1, min(stride, size))
    spans: list[_Span] = []
    if ring:
        count = math.ceil(extent / stride)
        for i in range(count):
            start = (offset + i * stride) % extent
            spans.append(_Span(start, size, start, size))
    else:
        starts = list(range(0, extent - size + 1, stride))
        if starts[-1] != extent - size:
            starts.append(extent - size)
        for start in starts:
            spans.append(_Span(start, size, start, size))
    return spans


def _cross(rows: list[_Span], cols: list[_Span], frames: int) -> tuple[Window, ...]:
    windows = []
    for ry in rows:
        for rx in cols:
            windows.append(Window(
                read=TileRegion(0, frames, ry.read_start, ry.read_len,
                                rx.read_start, rx.read_len),
                write=TileRegion(0, frames, ry.write_start, ry.write_len,
                                 rx.write_start, rx.write_len),
            ))
    return tuple(windows)


def _check_partition(spans: list[_Span], extent: int, ring: bool, axis: str) -> None:
    claimed = [0] * extent
    for s in spans:
        for k in range(s.write_len):
            claimed[(s.write_start + k) % extent] += 1
    bad = [i for i, c in enumerate(claimed) if c != 1]
    if bad:
        raise CoverageError(f"{axis} axis partition broken at indices {bad[:8]}")


def plan_spatial_step(cfg: SpatialPlanConfig, step: int, *, frames: int = 1) -> StepPlan:
    """Window layout for one denoising step (see module docstring)."""
    if step < 0:
        raise ValueError("step must be >= 0")
    o_x = (step * cfg.delta_x) % cfg.window_w
    o_y = (step * cfg.delta_y) % cfg.window_h
    if step < cfg.warmup_steps:
        stride_x = max(1, cfg.window_w // cfg.warmup_divisor)
        stride_y = max(1, cfg.window_h // cfg.warmup_divisor)
        cols = _blended_axis(cfg.pano_w, cfg.window_w, o_x if cfg.h_ring else 0,
                             stride_x, cfg.h_ring)
        rows = _blended_axis(cfg.pano_h, cfg.window_h, 0, stride_y, False)
        return StepPlan(step=step, mode="blended",
                        windows=_cross(rows, cols, frames), offset=(o_x, o_y))
    cols = _exclusive_axis(cfg.pano_w, cfg.window_w, o_x, cfg.h_ring)
    rows = _exclusive_axis(cfg.pano_h, cfg.window_h, o_y, False)
    _check_partition(cols, cfg.pano_w, cfg.h_ring, "column")
    _check_partition(rows, cfg.pano_h, False, "row")
    return StepPlan(step=step, mode="exclusive",
                    windows=_cross(rows, cols, frames), offset=(o_x, o_y))


def plan_temporal_step(total_frames: int, window_frames: int, step: int,
                       delta_f: int | None = None, loopable: bool = False) -> list[Window]:
    """Frame-clip windows for one step; loopable mode wraps the frame ring."""
    if window_frames > total_frames:
        raise ValueError(f"window frames {window_frames} exceed total {total_frames}")
    if delta_f is None:
        delta_f = default_delta(window_frames, 2)
    if not 0 <= delta_f < window_frames:
        raise ValueError(f"delta_f must lie in [0, window_frames), got {delta_f}")
    o_f = (step * delta_f) % window_frames
    if total_frames == window_frames and not loopable:
        o_f = 0
    spans = _exclusive_axis(total_frames, window_frames, o_f, loopable)
    _check_partition(spans, total_frames, loopable, "frame")
    return [Window(read=TileRegion(s.read_start, s.read_len, 0, 1, 0, 1),
                   write=TileRegion(s.write_start, s.write_len, 0, 1, 0, 1))
            for s in spans]


def plan_viewport_step(grid: tuple[int, int], fov_deg: float, step: int,
                       deltas: tuple[float, float] | None = None, *,
                       out_size: tuple[int, int] = (64, 64)) -> list[ViewportSpec]:
    """Viewport centers for one step, top latitude row first.

    Longitude centers sit on a 2*pi/n_lon grid shifted by
    (step * delta_lon) mod cell.  Latitude centers sit on a pi/n_lat grid
    shifted vertically and clamped to [-pi/2, pi/2].

    Latitude is bounded, so a full-cell shift would march the bottom row
    away from the south pole and uncover the cap.  The default vertical
    shift therefore cycles inside the pole margin — the slack between
    the vertical half-fov and half a latitude cell — which keeps every
    step's grid sphere-covering whenever the unshifted grid is.
    Explicit `deltas` follow the plain (step * delta) mod cell rule and
    leave coverage to the caller's choice of fov.
    """
    n_lon, n_lat = grid
    if n_lon < 1 or n_lat < 1:
        raise ValueError(f"grid counts must be positive, got {grid}")
    if not 0.0 < fov_deg < 175.0:
        raise ValueError(f"fov must lie in (0, 175) degrees, got {fov_deg}")
    fov = math.radians(fov_deg)
    cell_lon = TWO_PI / n_lon
    cell_lat = math.pi / n_lat
    if deltas is None:
        w, h = out_size
        half_fov_v = math.atan(math.tan(fov / 2.0) * h / w)
        pole_margin = max(0.0, half_fov_v - cell_lat / 2.0)
        lat_span = min(cell_lat, pole_margin)
        d_lon, d_lat = cell_lon / 4.0, lat_span / 4.0
    else:
        d_lon, d_lat = deltas
        lat_span = cell_lat
    s_lon = math.fmod(step * d_lon, cell_lon)
    s_lat = math.fmod(step * d_lat, lat_span) if lat_span > 0.0 and d_lat else 0.0
    half_pi = math.pi / 2.0
    lats = sorted((min(half_pi, max(-half_pi, half_pi - (j + 0.5) * cell_lat + s_lat))
                   for j in range(n_lat)), reverse=True)
    vps = []
    for lat in lats:
        for i in range(n_lon):
            lon = math.fmod(-math.pi + i * cell_lon + s_lon + math.pi, TWO_PI) - math.pi
            vps.append(ViewportSpec(lon=lon, lat=lat, fov=fov, out_size=out_size))
    return vps
