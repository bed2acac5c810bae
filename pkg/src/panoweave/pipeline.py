"""Full-run orchestration under the constant-memory contract.

A run walks the schedule from t = T down to 1.  Each step decomposes the
latent into windows (spatial tiles, spherical viewports, and/or temporal
clips), denoises each window at full window size, and recombines:

* exclusive steps write each element exactly once (reads come from the
  pre-step snapshot, so window order cannot matter);
* blended warm-up steps average overlapping windows via accumulators;
* ERP steps process viewports in order against a denoised mask,
  renoising already-advanced texels back to level t before they re-enter
  a later viewport (the overlap rebalance).

The denoiser only ever sees one window-sized tile at a time, so its peak
allocation is independent of panorama size.  Worker threads may denoise
exclusive windows concurrently; results are merged in plan order, which
keeps output bit-identical across worker counts.
"""

from __future__ import annotations

import math
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.ndimage import map_coordinates

from . import kernels
from .denoisers import (Conditioning, DenoiseRequest, PanoWindow, SphereWindow,
                        validate_response)
from .errors import ConfigError, CoverageError, PipelineError
from .latent import (PanoLatent, blend_insert, extract_tile, finalize_blend,
                     insert_tile)
from .planner import (SpatialPlanConfig, plan_spatial_step, plan_temporal_step,
                      plan_viewport_step)
from .projection import (DenoisedMask, project_erp_to_viewport,
                         rebalance_overlap, reproject_overwrite,
                         viewport_footprint)
from .schedule import NoiseSchedule, SeededRng, make_linear_schedule, renoise

__all__ = ["GmgConfig", "RunConfig", "RunResult", "AllocationMeter",
           "run", "run_spatial_osd", "run_erp_osd", "run_gmg",
           "run_temporal_osd", "upsample_latent"]

MODES = ("perspective_pano", "erp_360")

# rng stream labels (never reuse numbers)
_S_INIT = 0
_S_REBALANCE = 1
_S_STAGE1 = 2
_S_GMG_RENOISE = 3


@dataclass(frozen=True)
class GmgConfig:
    enabled: bool = False
    scale: int = 4
    interpolation: str = "bicubic"   # or "bilinear"
    renoise_frac: float = 0.6        # t_r = round(frac * T)


@dataclass(frozen=True)
class RunConfig:
    mode: str = "perspective_pano"
    width: int = 512
    height: int = 128
    frames: int = 16
    channels: int = 4
    window_w: int = 64
    window_h: int = 64
    window_f: int = 16
    steps: int = 50
    beta_min: float = 1e-4
    beta_max: float = 0.02
    seed: int = 0
    loopable: bool = False
    h_ring: bool = True
    delta_x: int | None = None
    delta_y: int | None = None
    delta_f: int | None = None
    warmup_steps: int | None = None        # K; None -> ceil(T/4), erp ignores
    warmup_divisor: int = 2
    vp_grid: tuple[int, int] = (6, 3)
    fov_deg: float = 100.0
    vp_deltas: tuple[float, float] | None = None
    workers: int = 1
    gmg: GmgConfig = field(default_factory=GmgConfig)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.width, self.height, self.frames, self.channels) < 1:
            raise ConfigError("dimensions must be positive")
        if self.mode == "erp_360" and self.width != 2 * self.height:
            raise ConfigError(f"ERP width must equal twice height, "
                              f"got {self.width}x{self.height}")
        if self.window_w > self.width or self.window_h > self.height:
            raise ConfigError(f"window {self.window_w}x{self.window_h} exceeds "
                              f"output {self.width}x{self.height}")
        if self.window_f > self.frames:
            raise ConfigError(f"window frames {self.window_f} exceed "
                              f"total frames {self.frames}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.gmg.enabled:
            s = self.gmg.scale
            if s < 2:
                raise ConfigError("gmg scale must be >= 2")
            if self.width % s or self.height % s:
                raise ConfigError(f"gmg scale {s} must divide output dims "
                                  f"{self.width}x{self.height} evenly")
            if self.gmg.interpolation not in ("bicubic", "bilinear"):
                raise ConfigError(f"unknown interpolation {self.gmg.interpolation!r}")
            low_w, low_h = self.width // s, self.height // s
            if self.window_w > low_w or (self.mode == "perspective_pano"
                                         and self.window_h > low_h):
                raise ConfigError(f"window does not fit the {low_w}x{low_h} "
                                  f"low-resolution stage")
            if self.mode == "erp_360" and low_w != 2 * low_h:
                raise ConfigError("gmg low-res stage breaks the ERP 2:1 aspect")

    @property
    def t_ring(self) -> bool:
        return self.loopable

    @property
    def erp(self) -> bool:
        return self.mode == "erp_360"

    def warmup(self, total_steps: int) -> int:
        if self.erp:
            return 0
        if self.warmup_steps is None:
            return math.ceil(total_steps / 4)
        return min(self.warmup_steps, total_steps)

    def spatial_plan_config(self, total_steps: int) -> SpatialPlanConfig:
        return SpatialPlanConfig(
            pano_w=self.width, pano_h=self.height,
            window_w=self.window_w, window_h=self.window_h,
            h_ring=True if self.erp else self.h_ring,
            delta_x=self.delta_x, delta_y=self.delta_y,
            warmup_steps=self.warmup(total_steps),
            warmup_divisor=self.warmup_divisor)


class AllocationMeter:
    """Tracks the engine's working set: peak per-request tile bytes and the
    named long-lived buffers (panorama, step output, accumulators)."""

    def __init__(self):
        self.peak_request_bytes = 0
        self.requests = 0
        self.buffers: dict[str, int] = {}
        self._lock = threading.Lock()

    def record_request(self, nbytes: int) -> None:
        with self._lock:
            self.requests += 1
            if nbytes > self.peak_request_bytes:
                self.peak_request_bytes = nbytes

    def record_buffer(self, name: str, nbytes: int) -> None:
        with self._lock:
            if nbytes > self.buffers.get(name, 0):
                self.buffers[name] = nbytes

    @property
    def tracked_buffer_bytes(self) -> int:
        return sum(self.buffers.values())


@dataclass
class RunResult:
    latent: PanoLatent
    manifest: dict
    extras: dict = field(default_factory=dict)


def _rel(offset: int, base: int, extent: int, ring: bool) -> int:
    return (offset - base) % extent if ring else offset - base


def _write_view(out: np.ndarray, clip, win, cfg: RunConfig) -> np.ndarray:
    """Slice of a window response covering its exclusive write region."""
    rf = _rel(clip.write.frame_start, clip.read.frame_start, cfg.frames, cfg.t_ring)
    rr = win.write.row_start - win.read.row_start
    rc = _rel(win.write.col_start, win.read.col_start, cfg.width,
              True if cfg.erp else cfg.h_ring)
    return out[rf:rf + clip.write.frame_len, :,
               rr:rr + win.write.row_len, rc:rc + win.write.col_len]


def _split_conditioning(cond: Conditioning | None, cfg: RunConfig,
                        geom) -> Conditioning | None:
    """Per-window split of a panorama-aligned conditioning image."""
    if cond is None:
        return None
    if cond.image_tile is None:
        return cond
    img = PanoLatent(cond.image_tile[None], h_ring=True if cfg.erp else cfg.h_ring)
    if isinstance(geom, PanoWindow):
        tile = extract_tile(img, geom.region.with_frames(0, 1))[0]
    else:
        tile = project_erp_to_viewport(img, geom.viewport)[0]
    return Conditioning(payload=cond.payload, image_tile=tile)


def _ordered_map(work, jobs, workers: int):
    """Run `work` over jobs (possibly in threads), yielding results in
    submission order with a bounded number in flight."""
    if workers <= 1:
        for job in jobs:
            yield job, work(job)
        return
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as ex:
        pending = deque()
        it = iter(jobs)
        for job in it:
            pending.append((job, ex.submit(work, job)))
            if len(pending) >= workers * 2:
                break
        while pending:
            job, fut = pending.popleft()
            result = fut.result()
            nxt = next(it, None)
            if nxt is not None:
                pending.append((nxt, ex.submit(work, nxt)))
            yield job, result


def _spatial_step(cfg: RunConfig, denoiser, z: PanoLatent, t: int, plan, clips,
                  meter: AllocationMeter, conditioning) -> None:
    jobs = [(ci, wi, clip, win)
            for ci, clip in enumerate(clips)
            for wi, win in enumerate(plan.windows)]

    def work(job):
        ci, wi, clip, win = job
        read = win.read.with_frames(clip.read.frame_start, clip.read.frame_len)
        geom = PanoWindow(region=read, frames=cfg.frames, height=cfg.height,
                          width=cfg.width, h_ring=cfg.h_ring, t_ring=cfg.t_ring)
        tile = extract_tile(z, read)
        meter.record_request(tile.nbytes)
        req = DenoiseRequest(t=t, geometry=geom, tile=tile,
                             conditioning=_split_conditioning(conditioning, cfg, geom))
        try:
            return validate_response(denoiser.step(req), req).tile
        except Exception as exc:
            raise PipelineError(f"step t={t}, clip {ci}, window {wi}: {exc}") from exc

    if plan.mode == "exclusive":
        nxt = np.empty_like(z.data)
        meter.record_buffer("step_output", nxt.nbytes)
        target = z.like(nxt)
        for job, out in _ordered_map(work, jobs, cfg.workers):
            ci, wi, clip, win = job
            region = win.write.with_frames(clip.write.frame_start, clip.write.frame_len)
            insert_tile(target, region, _write_view(out, clip, win, cfg))
        z.data[...] = nxt
    else:
        acc = PanoLatent.zeros(cfg.frames, cfg.channels, cfg.height, cfg.width,
                               h_ring=z.h_ring, t_ring=z.t_ring)
        wacc = PanoLatent.zeros(cfg.frames, cfg.channels, cfg.height, cfg.width,
                                h_ring=z.h_ring, t_ring=z.t_ring)
        meter.record_buffer("blend_accumulators", acc.data.nbytes + wacc.data.nbytes)
        for job, out in _ordered_map(work, jobs, cfg.workers):
            ci, wi, clip, win = job
            rf = _rel(clip.write.frame_start, clip.read.frame_start,
                      cfg.frames, cfg.t_ring)
            sub = out[rf:rf + clip.write.frame_len]
            region = win.read.with_frames(clip.write.frame_start, clip.write.frame_len)
            blend_insert(acc, region, sub, wacc)
        z.data[...] = finalize_blend(acc, wacc).data


def _erp_step(cfg: RunConfig, denoiser, schedule: NoiseSchedule, z: PanoLatent,
              t: int, step_index: int, clips, mask: DenoisedMask,
              rng_root: SeededRng, meter: AllocationMeter, conditioning) -> None:
    vps = plan_viewport_step(cfg.vp_grid, cfg.fov_deg, step_index, cfg.vp_deltas,
                             out_size=(cfg.window_w, cfg.window_h))
    mask.reset()
    frame_sel = np.zeros(cfg.frames, dtype=bool)
    for ci, clip in enumerate(clips):
        fidx = (clip.read.frame_start + np.arange(clip.read.frame_len)) % cfg.frames
        frame_sel[:] = False
        frame_sel[fidx] = True
        for vi, vp in enumerate(vps):
            fp = viewport_footprint(vp, cfg.height, cfg.width)
            stale = mask.data & fp.mask[None, :, :] & frame_sel[:, None, None]
            if stale.any():
                rebalance_overlap(z, stale, schedule, t,
                                  rng_root.fork(_S_REBALANCE, t, ci, vi))
            tile = project_erp_to_viewport(z, vp, frame_indices=fidx)
            meter.record_request(tile.nbytes)
            geom = SphereWindow(viewport=vp, frame_start=clip.read.frame_start,
                                frame_len=clip.read.frame_len,
                                total_frames=cfg.frames, t_ring=cfg.t_ring)
            req = DenoiseRequest(t=t, geometry=geom, tile=tile,
                                 conditioning=_split_conditioning(conditioning, cfg, geom))
            try:
                out = validate_response(denoiser.step(req), req).tile
            except Exception as exc:
                raise PipelineError(
                    f"step t={t}, clip {ci}, viewport {vi}: {exc}") from exc
            reproject_overwrite(out, vp, z, mask, frame_indices=fidx)
    if not mask.data.all():
        missing = int((~mask.data).sum())
        raise CoverageError(f"step t={t}: {missing} sphere texel(s) left uncovered")


def _osd_loop(cfg: RunConfig, denoiser, schedule: NoiseSchedule, *,
              t_start: int, init_latent: PanoLatent | None, rng_root: SeededRng,
              meter: AllocationMeter, step_callback=None,
              conditioning: Conditioning | None = None) -> PanoLatent:
    total = schedule.steps
    h_ring = True if cfg.erp else cfg.h_ring
    if init_latent is None:
        data = rng_root.fork(_S_INIT).standard_normal(
            (cfg.frames, cfg.channels, cfg.height, cfg.width), dtype=np.float32)
        z = PanoLatent(data, h_ring=h_ring, t_ring=cfg.t_ring)
    else:
        z = init_latent.copy()
        z.h_ring, z.t_ring = h_ring, cfg.t_ring
    meter.record_buffer("panorama", z.data.nbytes)
    spatial_cfg = None if cfg.erp else cfg.spatial_plan_config(total)
    mask = DenoisedMask.empty(cfg.frames, cfg.height, cfg.width) if cfg.erp else None
    if mask is not None:
        meter.record_buffer("denoised_mask", mask.data.nbytes)
    for t in range(t_start, 0, -1):
        i = total - t  # completed steps
        clips = plan_temporal_step(cfg.frames, min(cfg.window_f, cfg.frames), i,
                                   cfg.delta_f, loopable=cfg.t_ring)
        if cfg.erp:
            _erp_step(cfg, denoiser, schedule, z, t, i, clips, mask,
                      rng_root, meter, conditioning)
        else:
            plan = plan_spatial_step(spatial_cfg, i, frames=1)
            _spatial_step(cfg, denoiser, z, t, plan, clips, meter, conditioning)
        if step_callback is not None:
            step_callback(t - 1, z)
    return z


def upsample_latent(latent: PanoLatent, scale: int,
                    method: str = "bicubic") -> PanoLatent:
    """Spatially upsample by an integer factor, ring-aware along width."""
    order = {"bicubic": 3, "bilinear": 1}.get(method)
    if order is None:
        raise ConfigError(f"unknown interpolation {method!r}")
    if scale < 1:
        raise ConfigError("scale must be >= 1")
    f, c, h, w = latent.data.shape
    pad = 8
    data = np.pad(latent.data, ((0, 0), (0, 0), (pad, pad), (0, 0)), mode="edge")
    data = np.pad(data, ((0, 0), (0, 0), (0, 0), (pad, pad)),
                  mode="wrap" if latent.h_ring else "edge")
    ys = (np.arange(h * scale) + 0.5) / scale - 0.5 + pad
    xs = (np.arange(w * scale) + 0.5) / scale - 0.5 + pad
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    out = np.empty((f, c, h * scale, w * scale), dtype=np.float32)
    for fi in range(f):
        for ci in range(c):
            out[fi, ci] = map_coordinates(data[fi, ci], [gy, gx], order=order,
                                          mode="nearest", prefilter=order > 1)
    return PanoLatent(out, h_ring=latent.h_ring, t_ring=latent.t_ring)


def _require_schedule(denoiser, schedule: NoiseSchedule | None, cfg: RunConfig):
    if schedule is not None:
        return schedule
    schedule = getattr(denoiser, "schedule", None)
    if schedule is None:
        schedule = make_linear_schedule(cfg.steps, cfg.beta_min, cfg.beta_max)
    return schedule


def run(cfg: RunConfig, denoiser, schedule: NoiseSchedule | None = None,
        step_callback=None, conditioning: Conditioning | None = None) -> RunResult:
    """Dispatch a full generation run per the config."""
    cfg.validate()
    schedule = _require_schedule(denoiser, schedule, cfg)
    if cfg.gmg.enabled:
        return run_gmg(cfg, denoiser, schedule, step_callback=step_callback,
                       conditioning=conditioning)
    return _single_stage(cfg, denoiser, schedule, step_callback, conditioning)


def _single_stage(cfg, denoiser, schedule, step_callback=None,
                  conditioning=None) -> RunResult:
    meter = AllocationMeter()
    root = SeededRng(cfg.seed)
    start = time.perf_counter()
    z = _osd_loop(cfg, denoiser, schedule, t_start=schedule.steps,
                  init_latent=None, rng_root=root, meter=meter,
                  step_callback=step_callback, conditioning=conditioning)
    return RunResult(latent=z, manifest=_manifest(cfg, schedule, meter, start))


def run_spatial_osd(cfg: RunConfig, denoiser, schedule: NoiseSchedule | None = None,
                    step_callback=None, conditioning=None) -> RunResult:
    if cfg.mode != "perspective_pano":
        raise ConfigError("run_spatial_osd requires mode=perspective_pano")
    cfg.validate()
    schedule = _require_schedule(denoiser, schedule, cfg)
    return _single_stage(cfg, denoiser, schedule, step_callback, conditioning)


def run_erp_osd(cfg: RunConfig, denoiser, schedule: NoiseSchedule | None = None,
                step_callback=None, conditioning=None) -> RunResult:
    if cfg.mode != "erp_360":
        raise ConfigError("run_erp_osd requires mode=erp_360")
    cfg.validate()
    schedule = _require_schedule(denoiser, schedule, cfg)
    return _single_stage(cfg, denoiser, schedule, step_callback, conditioning)


def run_temporal_osd(cfg: RunConfig, denoiser, schedule: NoiseSchedule | None = None,
                     step_callback=None, conditioning=None) -> RunResult:
    if cfg.frames < cfg.window_f:
        raise ConfigError("temporal run requires frames >= window_f")
    cfg.validate()
    schedule = _require_schedule(denoiser, schedule, cfg)
    return _single_stage(cfg, denoiser, schedule, step_callback, conditioning)


def run_gmg(cfg: RunConfig, denoiser, schedule: NoiseSchedule | None = None,
            step_callback=None, conditioning=None) -> RunResult:
    """Two-stage run: low-res layout pass, upsample, renoise, refine."""
    cfg.validate()
    if not cfg.gmg.enabled:
        raise ConfigError("run_gmg requires gmg.enabled")
    schedule = _require_schedule(denoiser, schedule, cfg)
    g = cfg.gmg
    total = schedule.steps
    meter = AllocationMeter()
    root = SeededRng(cfg.seed)
    start = time.perf_counter()
    low_cfg = replace(cfg, width=cfg.width // g.scale, height=cfg.height // g.scale,
                      gmg=replace(g, enabled=False))
    low_cfg.validate()
    stage1 = _osd_loop(low_cfg, denoiser, schedule, t_start=total,
                       init_latent=None, rng_root=root.fork(_S_STAGE1),
                       meter=meter, conditioning=conditioning)
    upsampled = upsample_latent(stage1, g.scale, g.interpolation)
    t_r = min(total, max(1, round(g.renoise_frac * total)))
    guided = upsampled.like(
        renoise(upsampled.data, schedule, t_r, root.fork(_S_GMG_RENOISE)))
    z = _osd_loop(cfg, denoiser, schedule, t_start=t_r, init_latent=guided,
                  rng_root=root, meter=meter, step_callback=step_callback,
                  conditioning=conditioning)
    manifest = _manifest(cfg, schedule, meter, start)
    manifest["gmg"] = {"scale": g.scale, "interpolation": g.interpolation,
                       "renoise_step": t_r}
    return RunResult(latent=z, manifest=manifest,
                     extras={"stage1": stage1, "stage1_upsampled": upsampled})


def _manifest(cfg: RunConfig, schedule: NoiseSchedule, meter: AllocationMeter,
              start: float) -> dict:
    return {
        "config": asdict(cfg),
        "steps": schedule.steps,
        "duration_s": round(time.perf_counter() - start, 3),
        "peak_request_bytes": meter.peak_request_bytes,
        "denoiser_calls": meter.requests,
        "tracked_buffer_bytes": meter.tracked_buffer_bytes,
        "buffers": dict(meter.buffers),
        "kernel_backend": kernels.active_backend(),
    }
