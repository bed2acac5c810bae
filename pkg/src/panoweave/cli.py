"""Command-line front end.

Subcommands: `generate` (run the engine and export artifacts),
`audit-plan` (render window schedules and run coverage audits),
`metrics` (seam/flicker reports for a PWLT dump), and
`protocol-echo-test` (plugin conformance).

Exit codes: 0 success, 2 config error, 3 pipeline error,
4 plugin protocol error.  `PANOWEAVE_WORKERS` sets the default worker
count.  See configs/example.yaml for the config file format.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np
import yaml
from PIL import Image

from .denoisers import (Conditioning, DiracOracle, EchoDenoiser,
                        PluginDenoiser, SmoothingMock)
from .errors import ConfigError, PanoweaveError, ProtocolError
from .latent import read_pwlt, write_pwlt
from .metrics import (coverage_audit, temporal_flicker_metric,
                      viewport_coverage_audit, wrap_seam_metric)
from .pipeline import GmgConfig, RunConfig, run
from .planner import plan_spatial_step, plan_temporal_step, plan_viewport_step
from .protocol import run_conformance
from .schedule import make_linear_schedule
from .targets import make_field

_RUN_KEYS = {
    "mode", "size", "window", "channels", "steps", "beta_min", "beta_max",
    "seed", "loopable", "h_ring", "delta_x", "delta_y", "delta_f",
    "warmup_steps", "warmup_divisor", "workers", "gmg", "denoiser", "viewports",
}
_GMG_KEYS = {"enabled", "scale", "interpolation", "renoise_frac"}
_DENOISER_KEYS = {"kind", "target", "radius", "structure_mix", "command", "pool"}
_VIEWPORT_KEYS = {"grid", "fov_deg", "deltas"}


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r} in {where}")


def _triple(value, where: str) -> tuple[int, int, int]:
    if isinstance(value, str):
        parts = value.lower().split("x")
    else:
        parts = list(value)
    if len(parts) == 2:
        parts = list(parts) + [1]
    if len(parts) != 3:
        raise ConfigError(f"{where} must be WxH or WxHxF, got {value!r}")
    try:
        w, h, f = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{where} must be integers, got {value!r}") from None
    return w, h, f


def load_config(path: str | None, overrides: argparse.Namespace) -> tuple[RunConfig, dict]:
    """Merge a YAML config file with CLI overrides; returns (cfg, denoiser spec)."""
    raw: dict = {}
    if path:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
    _reject_unknown(raw, _RUN_KEYS, "run config")
    den = dict(raw.pop("denoiser", {}) or {})
    _reject_unknown(den, _DENOISER_KEYS, "denoiser")
    gmg_raw = dict(raw.pop("gmg", {}) or {})
    _reject_unknown(gmg_raw, _GMG_KEYS, "gmg")
    vp_raw = dict(raw.pop("viewports", {}) or {})
    _reject_unknown(vp_raw, _VIEWPORT_KEYS, "viewports")

    kw: dict = {}
    if "size" in raw:
        kw["width"], kw["height"], kw["frames"] = _triple(raw.pop("size"), "size")
    if "window" in raw:
        kw["window_w"], kw["window_h"], kw["window_f"] = _triple(raw.pop("window"),
                                                                 "window")
    kw.update(raw)
    if vp_raw.get("grid") is not None:
        kw["vp_grid"] = tuple(int(g) for g in vp_raw["grid"])
    if vp_raw.get("fov_deg") is not None:
        kw["fov_deg"] = float(vp_raw["fov_deg"])
    if vp_raw.get("deltas") is not None:
        kw["vp_deltas"] = tuple(float(d) for d in vp_raw["deltas"])
    if gmg_raw:
        kw["gmg"] = GmgConfig(**gmg_raw)

    # CLI overrides beat the file
    if getattr(overrides, "mode", None):
        kw["mode"] = overrides.mode
    if getattr(overrides, "size", None):
        kw["width"], kw["height"], kw["frames"] = _triple(overrides.size, "--size")
    if getattr(overrides, "window", None):
        kw["window_w"], kw["window_h"], kw["window_f"] = _triple(overrides.window,
                                                                 "--window")
    for name in ("steps", "seed", "workers", "channels"):
        val = getattr(overrides, name, None)
        if val is not None:
            kw[name] = val
    if getattr(overrides, "loopable", None) is not None:
        kw["loopable"] = overrides.loopable
    if getattr(overrides, "gmg", None) is not None:
        base = kw.get("gmg", GmgConfig())
        kw["gmg"] = replace(base, enabled=overrides.gmg)
    if "workers" not in kw:
        kw["workers"] = int(os.environ.get("PANOWEAVE_WORKERS", "1"))
    if getattr(overrides, "oracle", None):
        den["kind"] = overrides.oracle
    if getattr(overrides, "target", None):
        den["target"] = {"name": overrides.target}
    if getattr(overrides, "plugin", None):
        den["kind"] = "plugin"
        den["command"] = overrides.plugin

    kw["window_f"] = min(kw.get("window_f", 16), kw.get("frames", 16))
    try:
        cfg = RunConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg, den


def build_denoiser(den: dict, cfg: RunConfig, schedule):
    kind = den.get("kind", "dirac")
    target = den.get("target", {"name": "ring-waves"})
    if isinstance(target, str):
        target = {"name": target}
    if kind == "dirac":
        return DiracOracle(make_field(target), schedule)
    if kind == "mock":
        return SmoothingMock(make_field(target), schedule,
                             radius=int(den.get("radius", 2)),
                             structure_mix=float(den.get("structure_mix", 0.6)))
    if kind == "echo":
        return EchoDenoiser(schedule)
    if kind == "plugin":
        command = den.get("command")
        if not command:
            raise ConfigError("denoiser kind 'plugin' needs a command")
        return PluginDenoiser(command, schedule, pool_size=int(den.get("pool", 1)))
    raise ConfigError(f"unknown denoiser kind {kind!r}")


def tone_map(latent_data: np.ndarray):
    """Map latent values to uint8 frames using the run's min/max."""
    lo = float(latent_data.min())
    hi = float(latent_data.max())
    span = (hi - lo) or 1.0
    scaled = np.clip((latent_data - lo) / span * 255.0, 0.0, 255.0).astype(np.uint8)
    return scaled, lo, hi


def _export_frames(latent, out_dir) -> tuple[list[str], float, float]:
    scaled, lo, hi = tone_map(latent.data)
    names = []
    channels = latent.channels
    for f in range(latent.frames):
        if channels >= 3:
            img = Image.fromarray(np.moveaxis(scaled[f, :3], 0, -1), mode="RGB")
        else:
            img = Image.fromarray(scaled[f, 0], mode="L")
        name = f"frame_{f:04d}.png"
        img.save(os.path.join(out_dir, name))
        names.append(name)
    return names, lo, hi


def load_image_planes(path: str, width: int, height: int) -> np.ndarray:
    """8-bit image -> (C, H, W) float32 in [-1, 1]; dims must match the run."""
    img = Image.open(path).convert("RGB")
    if img.size != (width, height):
        raise ConfigError(f"conditioning image is {img.size[0]}x{img.size[1]}, "
                          f"run needs {width}x{height}")
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return np.moveaxis(arr, -1, 0)


def _conditioning_from_args(args, cfg: RunConfig) -> Conditioning | None:
    payload = args.prompt.encode("utf-8") if getattr(args, "prompt", None) else None
    image = None
    if getattr(args, "cond_image", None):
        image = load_image_planes(args.cond_image, cfg.width, cfg.height)
    if payload is None and image is None:
        return None
    return Conditioning(payload=payload, image_tile=image)


def cmd_generate(args) -> int:
    cfg, den = load_config(args.config, args)
    schedule = make_linear_schedule(cfg.steps, cfg.beta_min, cfg.beta_max)
    denoiser = build_denoiser(den, cfg, schedule)
    conditioning = _conditioning_from_args(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    try:
        result = run(cfg, denoiser, schedule, conditioning=conditioning)
    finally:
        if hasattr(denoiser, "close"):
            denoiser.close()
    latent = result.latent

    artifacts = []
    dump = "latent.pwlt"
    write_pwlt(os.path.join(args.out, dump), latent)
    artifacts.append(dump)
    frames, lo, hi = _export_frames(latent, args.out)
    artifacts.extend(frames)

    summary = {}
    if latent.h_ring and latent.width >= 4:
        rep = wrap_seam_metric(latent)
        summary["seam"] = {"boundary": rep.boundary_discontinuity,
                           "interior": rep.interior_baseline, "ratio": rep.ratio}
    if latent.frames >= 2:
        rep = temporal_flicker_metric(latent)
        summary["flicker"] = {"median_interior": rep.median_interior,
                              "loop": rep.loop}
    manifest = dict(result.manifest)
    manifest["denoiser"] = {k: v for k, v in den.items() if k != "target"} | \
        ({"target": den.get("target")} if den.get("target") else {})
    manifest["tone_map"] = {"min": lo, "max": hi}
    manifest["metrics"] = summary
    manifest["artifacts"] = artifacts
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    metrics_lines = [f"{k}: {json.dumps(v, default=str)}" for k, v in summary.items()]
    with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
        fh.write("\n".join(metrics_lines) + "\n")
    print(f"wrote {len(artifacts) + 2} artifact(s) to {args.out}")
    for line in metrics_lines:
        print(line)
    return 0


def _render_axis(windows, width: int, key) -> str:
    marks = [" "] * width
    for i, win in enumerate(windows):
        region = win.write
        start, length = key(region)
        for k in range(length):
            marks[(start + k) % width] = chr(ord("a") + i % 26)
    return "".join(marks)


def _plan_record(cfg: RunConfig, step: int) -> dict:
    if cfg.erp:
        vps = plan_viewport_step(cfg.vp_grid, cfg.fov_deg, step, cfg.vp_deltas,
                                 out_size=(cfg.window_w, cfg.window_h))
        return {"step": step,
                "viewports": [{"lon": v.lon, "lat": v.lat, "fov": v.fov}
                              for v in vps]}
    plan = plan_spatial_step(cfg.spatial_plan_config(cfg.steps), step,
                             frames=cfg.frames)
    return {"step": step, "mode": plan.mode,
            "offset": list(plan.offset),
            "windows": [{"read": vars(w.read), "write": vars(w.write)}
                        for w in plan.windows]}


def cmd_audit_plan(args) -> int:
    cfg, _ = load_config(args.config, args)
    total = cfg.steps
    print(f"mode={cfg.mode} size={cfg.width}x{cfg.height}x{cfg.frames} "
          f"window={cfg.window_w}x{cfg.window_h}x{cfg.window_f} steps={total}")
    if getattr(args, "json", None):
        with open(args.json, "w") as fh:
            json.dump([_plan_record(cfg, s) for s in range(total)], fh, indent=1)
        print(f"schedule dump written to {args.json}")
    violations = 0
    if cfg.erp:
        for step in range(total):
            vps = plan_viewport_step(cfg.vp_grid, cfg.fov_deg, step, cfg.vp_deltas,
                                     out_size=(cfg.window_w, cfg.window_h))
            rep = viewport_coverage_audit(vps, cfg.height, cfg.width)
            centers = ", ".join(f"({np.degrees(v.lon):.0f},{np.degrees(v.lat):.0f})"
                                for v in vps[: cfg.vp_grid[0]])
            print(f"step {step}: top row centers [deg]: {centers}"
                  + ("" if rep.ok else f"  !! {rep.violations}"))
            violations += len(rep.violations)
    else:
        spatial = cfg.spatial_plan_config(total)
        plans = [plan_spatial_step(spatial, s, frames=cfg.frames)
                 for s in range(total)]
        for plan in plans:
            line = f"step {plan.step} ({plan.mode}): o_x={plan.offset[0]} o_y={plan.offset[1]}"
            if cfg.width <= 80 and plan.mode == "exclusive":
                row0 = [w for w in plan.windows
                        if w.write.row_start == min(v.write.row_start
                                                    for v in plan.windows)]
                line += "  |" + _render_axis(row0, cfg.width,
                                             lambda r: (r.col_start, r.col_len)) + "|"
            print(line)
        rep = coverage_audit(plans, (cfg.frames, cfg.height, cfg.width),
                             h_ring=cfg.h_ring, t_ring=cfg.t_ring)
        print(rep.text())
        violations += len(rep.violations)
    if cfg.frames > cfg.window_f or cfg.loopable:
        print("temporal clips:")
        for step in range(min(total, 4)):
            wins = plan_temporal_step(cfg.frames, cfg.window_f, step, cfg.delta_f,
                                      loopable=cfg.loopable)
            spans = ", ".join(
                f"[{w.read.frame_start}..{(w.read.frame_start + w.read.frame_len - 1) % cfg.frames}]"
                for w in wins)
            print(f"step {step}: {len(wins)} clip(s): {spans}")
    print(f"{violations} violations")
    return 0 if violations == 0 else 3


def cmd_metrics(args) -> int:
    latent = read_pwlt(args.input)
    out = {}
    if latent.h_ring and latent.width >= 4:
        rep = wrap_seam_metric(latent, seed=args.seed or 0)
        out["seam"] = {"boundary": rep.boundary_discontinuity,
                       "interior": rep.interior_baseline, "ratio": rep.ratio}
    if latent.frames >= 2:
        rep = temporal_flicker_metric(latent)
        out["flicker"] = {"transitions": list(rep.transitions), "loop": rep.loop,
                          "median_interior": rep.median_interior}
    for key, value in out.items():
        print(f"{key}: {json.dumps(value, default=str)}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=2, default=str)
    return 0


def cmd_protocol_echo_test(args) -> int:
    report = run_conformance(args.plugin, exchanges=args.exchanges)
    print(report.text())
    return 0 if report.ok else 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panoweave",
                                description="shifting-window panoramic video "
                                            "denoising engine")
    sub = p.add_subparsers(dest="command", required=True)

    def add_run_opts(sp, with_out: bool):
        sp.add_argument("--config", help="YAML run config")
        sp.add_argument("--mode", choices=["perspective_pano", "erp_360"])
        sp.add_argument("--size", help="WxHxF output dimensions")
        sp.add_argument("--window", help="WxHxF window dimensions")
        sp.add_argument("--steps", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--channels", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--loopable", action="store_true", default=None)
        sp.add_argument("--no-loopable", dest="loopable", action="store_false")
        sp.add_argument("--gmg", action="store_true", default=None)
        sp.add_argument("--no-gmg", dest="gmg", action="store_false")
        if with_out:
            sp.add_argument("--oracle", choices=["dirac", "mock", "echo"])
            sp.add_argument("--target", help="target field name for oracles")
            sp.add_argument("--plugin", help="denoiser plugin command line")
            sp.add_argument("--prompt", help="text conditioning forwarded to plugins")
            sp.add_argument("--cond-image",
                            help="conditioning image (PNG), split per window")
            sp.add_argument("--out", required=True, help="output directory")

    g = sub.add_parser("generate", help="run the engine and export artifacts")
    add_run_opts(g, with_out=True)
    g.set_defaults(fn=cmd_generate)

    a = sub.add_parser("audit-plan", help="render schedules and audit coverage")
    add_run_opts(a, with_out=False)
    a.add_argument("--json", help="also dump the full schedule as JSON")
    a.set_defaults(fn=cmd_audit_plan)

    m = sub.add_parser("metrics", help="metric reports for a PWLT dump")
    m.add_argument("input", help="PWLT tensor dump")
    m.add_argument("--json", help="also write the report as JSON")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(fn=cmd_metrics)

    t = sub.add_parser("protocol-echo-test", help="plugin conformance check")
    t.add_argument("--plugin", required=True, help="plugin command line")
    t.add_argument("--exchanges", type=int, default=3)
    t.set_defaults(fn=cmd_protocol_echo_test)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 4
    except PanoweaveError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
