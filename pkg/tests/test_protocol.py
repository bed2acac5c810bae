import os
import sys
from pathlib import Path

import numpy as np
import pytest

from panoweave.denoisers import (DenoiseRequest, DiracOracle, PluginDenoiser,
                                 PanoWindow)
from panoweave.errors import ProtocolError
from panoweave.latent import TileRegion
from panoweave.pipeline import RunConfig, run_spatial_osd
from panoweave.protocol import PluginChannel, run_conformance
from panoweave.schedule import make_linear_schedule
from panoweave.targets import RingWaves

PLUGIN_SRC = str(Path(__file__).resolve().parent.parent / "plugin" / "src")


def plugin_env():
    env = dict(os.environ)
    env["PYTHONPATH"] = PLUGIN_SRC + os.pathsep + env.get("PYTHONPATH", "")
    return env


def plugin_cmd(*args) -> list[str]:
    return [sys.executable, "-m", "denoise_plugin", *args]


def inline_plugin(body: str) -> list[str]:
    """A minimal scripted plugin for negative tests."""
    prelude = (
        "import json, struct, sys\n"
        "r, w = sys.stdin.buffer, sys.stdout.buffer\n"
        "def read_frame():\n"
        "    hdr = r.read(4)\n"
        "    if not hdr: sys.exit(0)\n"
        "    return r.read(struct.unpack('<I', hdr)[0])\n"
        "def write_frame(p):\n"
        "    w.write(struct.pack('<I', len(p))); w.write(p); w.flush()\n"
        "read_frame()\n"
        "write_frame(json.dumps({'proto': 1, 'max_window': [64, 64],"
        " 'max_frames': 8, 'conditioning': []}).encode())\n"
    )
    return [sys.executable, "-c", prelude + body]


class TestConformance:
    def test_reference_echo_plugin_passes(self):
        report = run_conformance(plugin_cmd("--callback", "echo"), env=plugin_env())
        assert report.ok, report.text()

    def test_reference_oracle_plugin_passes(self):
        report = run_conformance(plugin_cmd("--callback", "oracle"), env=plugin_env())
        assert report.ok, report.text()

    def test_short_tensor_fails_with_length_mismatch(self):
        cmd = inline_plugin(
            "while True:\n"
            "    hdr = json.loads(read_frame())\n"
            "    read_frame()\n"
            "    write_frame(json.dumps({'type': 'result', 'dtype': 'f32',"
            " 'shape': hdr['shape']}).encode())\n"
            "    write_frame(b'\\x00' * 8)\n"
        )
        report = run_conformance(cmd)
        assert not report.ok
        assert any("length mismatch" in detail for _, ok, detail in report.checks
                   if not ok)

    def test_nan_output_fails(self):
        cmd = inline_plugin(
            "import numpy as np\n"
            "while True:\n"
            "    hdr = json.loads(read_frame())\n"
            "    read_frame()\n"
            "    arr = np.zeros(hdr['shape'], dtype='<f4'); arr.flat[3] = np.nan\n"
            "    write_frame(json.dumps({'type': 'result', 'dtype': 'f32',"
            " 'shape': hdr['shape']}).encode())\n"
            "    write_frame(arr.tobytes())\n"
        )
        report = run_conformance(cmd)
        assert not report.ok
        assert any("non-finite" in detail for _, ok, detail in report.checks if not ok)

    def test_violations_carry_byte_offsets(self):
        cmd = inline_plugin("sys.exit(0)\n")  # dies after handshake
        report = run_conformance(cmd)
        assert not report.ok
        assert any("byte offset" in detail for _, ok, detail in report.checks
                   if not ok)


class TestPluginHost:
    def test_oracle_over_protocol_matches_in_process_step(self):
        sched = make_linear_schedule(8, 0.01, 0.2)
        geom = PanoWindow(region=TileRegion(0, 2, 0, 8, 24, 16), frames=2,
                          height=8, width=32, h_ring=True, t_ring=False)
        tile = np.random.default_rng(0).standard_normal((2, 3, 8, 16)).astype(np.float32)
        req = DenoiseRequest(t=4, geometry=geom, tile=tile)
        local = DiracOracle(RingWaves(), sched).step(req).tile
        with PluginDenoiser(plugin_cmd("--callback", "oracle"), sched,
                            env=plugin_env()) as remote_denoiser:
            remote = remote_denoiser.step(req).tile
        assert remote.tobytes() == local.tobytes()

    def test_oracle_over_protocol_matches_full_run_bitexact(self):
        cfg = RunConfig(width=96, height=32, frames=4, channels=2, window_w=32,
                        window_h=16, window_f=4, steps=6, seed=9)
        sched = make_linear_schedule(cfg.steps, 0.01, 0.2)
        local = run_spatial_osd(cfg, DiracOracle(RingWaves(), sched), sched)
        plugin = PluginDenoiser(plugin_cmd("--callback", "oracle"), sched,
                                env=plugin_env())
        try:
            remote = run_spatial_osd(cfg, plugin, sched)
        finally:
            plugin.close()
        assert remote.latent.data.tobytes() == local.latent.data.tobytes()

    def test_viewport_geometry_over_protocol_bitexact(self):
        from panoweave.denoisers import SphereWindow
        from panoweave.projection import ViewportSpec
        sched = make_linear_schedule(8, 0.01, 0.2)
        vp = ViewportSpec(0.7, -0.4, 1.5, (16, 16))
        geom = SphereWindow(viewport=vp, frame_start=1, frame_len=2,
                            total_frames=4, t_ring=True)
        tile = np.random.default_rng(1).standard_normal((2, 2, 16, 16)).astype(np.float32)
        req = DenoiseRequest(t=3, geometry=geom, tile=tile)
        local = DiracOracle(RingWaves(), sched).step(req).tile
        with PluginDenoiser(plugin_cmd("--callback", "oracle"), sched,
                            env=plugin_env()) as remote_denoiser:
            remote = remote_denoiser.step(req).tile
        assert remote.tobytes() == local.tobytes()

    def test_echo_plugin_identity(self):
        sched = make_linear_schedule(4)
        geom = PanoWindow(region=TileRegion(0, 1, 0, 4, 0, 8), frames=1,
                          height=4, width=8)
        tile = np.random.default_rng(2).standard_normal((1, 2, 4, 8)).astype(np.float32)
        with PluginDenoiser(plugin_cmd("--callback", "echo"), sched,
                            env=plugin_env()) as den:
            out = den.step(DenoiseRequest(t=1, geometry=geom, tile=tile)).tile
        assert out.tobytes() == tile.tobytes()

    def test_capability_violation_is_protocol_error(self):
        sched = make_linear_schedule(4)
        geom = PanoWindow(region=TileRegion(0, 1, 0, 4, 0, 64), frames=1,
                          height=4, width=64)
        tile = np.zeros((1, 1, 4, 64), np.float32)
        with PluginDenoiser(plugin_cmd("--callback", "echo", "--max-window", "8x8"),
                            sched, env=plugin_env()) as den:
            with pytest.raises(ProtocolError, match="capability"):
                den.step(DenoiseRequest(t=1, geometry=geom, tile=tile))

    def test_malformed_frame_length_reports_offset(self):
        cmd = inline_plugin(
            "read_frame(); read_frame()\n"
            "w.write(struct.pack('<I', 4096))\n"  # declares 4096, sends 4
            "w.write(b'abcd'); w.flush()\n"
        )
        channel = PluginChannel(cmd, timeout=5.0)
        header = {"type": "denoise", "t": 1, "alpha_bar_t": 0.5,
                  "alpha_bar_prev": 1.0, "dtype": "f32", "shape": [1, 1, 2, 2],
                  "geometry": {"kind": "pano", "region": [0, 1, 0, 2, 0, 2],
                               "pano_size": [1, 2, 2], "h_ring": True,
                               "t_ring": False},
                  "conditioning": None}
        with pytest.raises(ProtocolError, match="byte offset"):
            channel.denoise(header, np.zeros((1, 1, 2, 2), np.float32))
        channel.close()
