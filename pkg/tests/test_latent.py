import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panoweave.errors import BoundsError, CoverageError
from panoweave.latent import (PanoLatent, TileRegion, blend_insert, extract_tile,
                              finalize_blend, insert_tile, read_pwlt, write_pwlt)

from conftest import random_latent


def column_ramp(width=8, h_ring=True) -> PanoLatent:
    data = np.tile(np.arange(width, dtype=np.float32), (1, 1, 4, 1))
    return PanoLatent(data, h_ring=h_ring)


class TestExtract:
    def test_wrap_right_edge(self):
        lat = column_ramp(width=64)
        tile = extract_tile(lat, TileRegion(0, 1, 0, 4, 56, 16))
        expected = np.concatenate([np.arange(56, 64), np.arange(0, 8)]).astype(np.float32)
        assert np.array_equal(tile[0, 0, 0], expected)

    def test_full_width_identity(self, rng):
        lat = random_latent(rng, width=32)
        tile = extract_tile(lat, TileRegion(0, lat.frames, 0, lat.height, 0, 32))
        assert np.array_equal(tile, lat.data)

    def test_negative_start_wraps(self):
        lat = column_ramp(width=8)
        tile = extract_tile(lat, TileRegion(0, 1, 0, 4, -2, 4))
        assert np.array_equal(tile[0, 0, 0], np.float32([6, 7, 0, 1]))

    def test_non_ring_out_of_range_names_axis(self):
        lat = column_ramp(width=8, h_ring=False)
        with pytest.raises(BoundsError, match="column"):
            extract_tile(lat, TileRegion(0, 1, 0, 4, -2, 4))
        with pytest.raises(BoundsError, match="row"):
            extract_tile(lat, TileRegion(0, 1, 3, 4, 0, 4))
        with pytest.raises(BoundsError, match="frame"):
            extract_tile(lat, TileRegion(1, 1, 0, 4, 0, 4))

    def test_frame_ring_wraps(self, rng):
        lat = random_latent(rng, frames=4, t_ring=True)
        tile = extract_tile(lat, TileRegion(3, 2, 0, 2, 0, 2))
        assert np.array_equal(tile[0], lat.data[3, :, :2, :2])
        assert np.array_equal(tile[1], lat.data[0, :, :2, :2])


class TestInsert:
    def test_round_trip_leaves_latent_unchanged(self, rng):
        lat = random_latent(rng)
        before = lat.data.copy()
        region = TileRegion(0, 2, 2, 4, 10, 8)
        insert_tile(lat, region, extract_tile(lat, region))
        assert np.array_equal(lat.data, before)

    def test_wrapped_write_readable_across_seam(self, rng):
        lat = random_latent(rng, width=16)
        region = TileRegion(0, 2, 0, 8, 12, 8)
        tile = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        insert_tile(lat, region, tile)
        assert np.array_equal(extract_tile(lat, region), tile)
        assert np.array_equal(lat.data[..., 12:], tile[..., :4])
        assert np.array_equal(lat.data[..., :4], tile[..., 4:])

    def test_wrapped_ones_nonzero_count(self):
        # independent oracle: count nonzeros after writing ones into zeros
        lat = PanoLatent.zeros(3, 2, 6, 10, h_ring=True)
        region = TileRegion(0, 2, 1, 4, 7, 6)
        insert_tile(lat, region, np.ones((2, 2, 4, 6), dtype=np.float32))
        expected = region.frame_len * lat.channels * region.row_len * region.col_len
        assert int((lat.data == 1).sum()) == expected
        assert int((lat.data != 0).sum()) == expected

    def test_shape_mismatch_rejected(self, rng):
        lat = random_latent(rng)
        with pytest.raises(ValueError, match="shape"):
            insert_tile(lat, TileRegion(0, 1, 0, 2, 0, 2),
                        np.zeros((1, 3, 2, 3), dtype=np.float32))


class TestBlend:
    def test_two_full_overlaps_average(self):
        val = PanoLatent.zeros(1, 1, 2, 4)
        w = PanoLatent.zeros(1, 1, 2, 4)
        region = TileRegion(0, 1, 0, 2, 0, 4)
        a = np.full((1, 1, 2, 4), 3.0, dtype=np.float32)
        b = np.full((1, 1, 2, 4), 5.0, dtype=np.float32)
        blend_insert(val, region, a, w)
        blend_insert(val, region, b, w)
        out = finalize_blend(val, w)
        assert np.allclose(out.data, 4.0)

    def test_single_write_identity(self, rng):
        val = PanoLatent.zeros(1, 2, 4, 6)
        w = PanoLatent.zeros(1, 2, 4, 6)
        region = TileRegion(0, 1, 0, 4, 0, 6)
        tile = rng.standard_normal((1, 2, 4, 6)).astype(np.float32)
        blend_insert(val, region, tile, w)
        assert np.array_equal(finalize_blend(val, w).data, tile)

    def test_staggered_strip_matches_scalar_oracle(self):
        # three half-overlapping constant tiles 1,2,3 on a 1-D strip of 16,
        # tiles 8 wide at starts 0, 4, 8 (full coverage, mixed multiplicity)
        width, tile_w = 16, 8
        starts, values = [0, 4, 8], [1.0, 2.0, 3.0]
        # independent scalar accumulation oracle
        acc = [0.0] * width
        cnt = [0] * width
        for s, v in zip(starts, values):
            for k in range(tile_w):
                acc[s + k] += v
                cnt[s + k] += 1
        assert all(cnt)
        expected = [a / c for a, c in zip(acc, cnt)]

        val = PanoLatent.zeros(1, 1, 1, width)
        w = PanoLatent.zeros(1, 1, 1, width)
        for s, v in zip(starts, values):
            blend_insert(val, TileRegion(0, 1, 0, 1, s, tile_w),
                         np.full((1, 1, 1, tile_w), v, dtype=np.float32), w)
        out = finalize_blend(val, w)
        assert np.allclose(out.data[0, 0, 0], np.float32(expected))

    def test_finalize_zero_weight_is_coverage_error(self):
        val = PanoLatent.zeros(1, 1, 1, 4)
        w = PanoLatent.zeros(1, 1, 1, 4)
        blend_insert(val, TileRegion(0, 1, 0, 1, 0, 2),
                     np.ones((1, 1, 1, 2), dtype=np.float32), w)
        with pytest.raises(CoverageError, match="zero weight"):
            finalize_blend(val, w)

    def test_write_order_invariant(self, rng):
        regions = [TileRegion(0, 1, 0, 4, s, 8) for s in (0, 4, 9, 12)]
        tiles = [rng.standard_normal((1, 1, 4, 8)).astype(np.float32) for _ in regions]
        outs = []
        for order in ([0, 1, 2, 3], [3, 1, 0, 2]):
            val = PanoLatent.zeros(1, 1, 4, 16, h_ring=True)
            w = PanoLatent.zeros(1, 1, 4, 16, h_ring=True)
            for i in order:
                blend_insert(val, regions[i], tiles[i], w)
            outs.append(finalize_blend(val, w).data)
        assert np.array_equal(outs[0], outs[1])


@settings(max_examples=50, deadline=None)
@given(start=st.integers(-40, 40), length=st.integers(1, 16), data=st.data())
def test_insert_extract_round_trip_property(start, length, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    lat = random_latent(rng, frames=2, channels=1, height=4, width=16, h_ring=True)
    before = lat.data.copy()
    region = TileRegion(0, 2, 1, 3, start, length)
    insert_tile(lat, region, extract_tile(lat, region))
    assert np.array_equal(lat.data, before)


@settings(max_examples=30, deadline=None)
@given(shift=st.integers(0, 31), start=st.integers(-16, 47))
def test_extract_translation_equivariant_under_ring_shift(shift, start):
    rng = np.random.default_rng(7)
    lat = random_latent(rng, width=32)
    rolled = PanoLatent(np.roll(lat.data, shift, axis=3), h_ring=True)
    a = extract_tile(lat, TileRegion(0, 1, 0, 4, start, 8))
    b = extract_tile(rolled, TileRegion(0, 1, 0, 4, start + shift, 8))
    assert np.array_equal(a, b)


class TestPwlt:
    def test_round_trip(self, rng, tmp_path):
        lat = random_latent(rng, frames=3, channels=2, height=4, width=8,
                            h_ring=True, t_ring=True)
        path = tmp_path / "dump.pwlt"
        write_pwlt(path, lat)
        back = read_pwlt(path)
        assert np.array_equal(back.data, lat.data)
        assert back.h_ring and back.t_ring
        assert path.stat().st_size == 32 + lat.data.nbytes

    def test_header_layout(self, tmp_path):
        lat = PanoLatent.zeros(1, 2, 3, 4, h_ring=True)
        path = tmp_path / "h.pwlt"
        write_pwlt(path, lat)
        raw = path.read_bytes()
        assert raw[:4] == b"PWLT"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert [int.from_bytes(raw[8 + 4 * i:12 + 4 * i], "little")
                for i in range(4)] == [1, 2, 3, 4]
        assert raw[24] == 1 and raw[25] == 0
        assert len(raw) == 32 + 1 * 2 * 3 * 4 * 4

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.pwlt"
        path.write_bytes(b"JUNK" + b"\0" * 40)
        with pytest.raises(ValueError, match="magic"):
            read_pwlt(path)
