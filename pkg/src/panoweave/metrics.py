"""Reproducible numbers for the engine's structural claims.

Seam continuity compares the identified wrap edge against randomly
sampled interior column pairs; temporal flicker is the per-transition
mean absolute difference; coverage audits replay plans against a count
bitmap.  Everything is a pure function of its inputs plus a declared
seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .latent import PanoLatent, TileRegion, _axis_indices
from .projection import ViewportSpec, viewport_footprint

__all__ = [
    "SeamReport", "FlickerReport", "CoverageReport",
    "wrap_seam_metric", "temporal_flicker_metric",
    "coverage_audit", "viewport_coverage_audit",
]


@dataclass(frozen=True)
class SeamReport:
    boundary_discontinuity: float
    interior_baseline: float

    @property
    def ratio(self) -> float:
        if self.interior_baseline > 0.0:
            return self.boundary_discontinuity / self.interior_baseline
        return 1.0 if self.boundary_discontinuity == 0.0 else math.inf


def wrap_seam_metric(latent: PanoLatent, seed: int = 0, pairs: int = 32) -> SeamReport:
    """Mean |edge difference| across the wrap seam vs. random interior pairs."""
    if not latent.h_ring:
        raise ValueError("wrap seam metric requires h_ring=true")
    if latent.width < 4:
        raise ValueError(f"width {latent.width} too small for a seam statistic")
    z = latent.data
    boundary = float(np.mean(np.abs(z[..., 0] - z[..., latent.width - 1])))
    rng = np.random.Generator(np.random.Philox(seed))
    xs = rng.integers(0, latent.width - 1, size=pairs)
    baseline = float(np.mean([np.mean(np.abs(z[..., x + 1] - z[..., x])) for x in xs]))
    return SeamReport(boundary_discontinuity=boundary, interior_baseline=baseline)


@dataclass(frozen=True)
class FlickerReport:
    transitions: tuple[float, ...]   # |Z[f+1] - Z[f]| for f = 0..F-2
    loop: float | None               # F-1 -> 0 transition when t_ring

    @property
    def median_interior(self) -> float:
        return float(np.median(self.transitions))


def temporal_flicker_metric(latent: PanoLatent) -> FlickerReport:
    if latent.frames < 2:
        raise ValueError("need at least two frames")
    z = latent.data
    trans = tuple(float(np.mean(np.abs(z[f + 1] - z[f]))) for f in range(latent.frames - 1))
    loop = float(np.mean(np.abs(z[0] - z[-1]))) if latent.t_ring else None
    return FlickerReport(transitions=trans, loop=loop)


@dataclass
class CoverageReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    steps_checked: int = 0
    elements: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def text(self) -> str:
        head = (f"coverage audit: {self.steps_checked} step(s), "
                f"{self.elements} elements, {len(self.violations)} violation(s)")
        lines = [head] + [f"  {v}" for v in self.violations]
        lines += [f"  warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def _paint(counts: np.ndarray, region: TileRegion, dims, rings) -> None:
    frames, height, width = dims
    t_ring, h_ring = rings
    fi = _axis_indices(region.frame_start, region.frame_len, frames, t_ring, "frame")
    ri = _axis_indices(region.row_start, region.row_len, height, False, "row")
    ci = _axis_indices(region.col_start, region.col_len, width, h_ring, "column")
    counts[np.ix_(fi, ri, ci)] += 1


def coverage_audit(plans, dims: tuple[int, int, int],
                   h_ring: bool = True, t_ring: bool = False) -> CoverageReport:
    """Replay plans over a (F, H, W) count bitmap.

    Exclusive plans must claim every element exactly once (write regions);
    blended plans must cover every element at least once (read regions).
    """
    report = CoverageReport(elements=int(np.prod(dims)))
    for plan in plans:
        counts = np.zeros(dims, dtype=np.int32)
        exclusive = plan.mode == "exclusive"
        for win in plan.windows:
            _paint(counts, win.write if exclusive else win.read, dims, (t_ring, h_ring))
        uncovered = int((counts == 0).sum())
        if uncovered:
            report.violations.append(
                f"step {plan.step} ({plan.mode}): {uncovered} uncovered element(s)")
        if exclusive:
            doubled = int((counts > 1).sum())
            if doubled:
                report.violations.append(
                    f"step {plan.step} (exclusive): {doubled} element(s) claimed twice")
        report.steps_checked += 1
    offsets = {getattr(p, "offset", None) for p in plans if p.mode == "exclusive"}
    if len(offsets) == 1 and report.steps_checked > 1 and None not in offsets:
        report.warnings.append(
            "degenerate schedule: window boundaries never move between steps")
    return report


def viewport_coverage_audit(viewports: list[ViewportSpec], erp_height: int,
                            erp_width: int) -> CoverageReport:
    """Rasterize every ERP texel and check membership in >= 1 frustum."""
    covered = np.zeros((erp_height, erp_width), dtype=bool)
    for vp in viewports:
        covered |= viewport_footprint(vp, erp_height, erp_width).mask
    report = CoverageReport(steps_checked=1, elements=erp_height * erp_width)
    uncovered = int((~covered).sum())
    if uncovered:
        report.violations.append(f"sphere rasterization: {uncovered} uncovered texel(s)")
    return report
