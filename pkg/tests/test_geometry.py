import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clrlane.errors import DimensionError, DomainError
from clrlane.geometry import (
    INVALID_X, Lane, LaneGrid, LanePrior, decode_prior, lane_params, mask_iou,
    pairwise_runs_iou, rasterize, rasterize_runs, resample_polyline,
)
from conftest import vertical_lane
from oracles import brute_rasterize, pixel_iou


def straight_prior(n, start_x=0.5, start_y=1.0, theta=math.pi / 2, length=None, offsets=None):
    return LanePrior(
        0.9, start_x, start_y, theta, n if length is None else length,
        np.zeros(n) if offsets is None else offsets,
    )


class TestLaneGrid:
    def test_rows_are_equally_spaced(self):
        g = LaneGrid(72, 590, 1640)
        assert g.ys[0] == 0.0
        assert g.ys[71] == pytest.approx(590.0)
        np.testing.assert_allclose(np.diff(g.ys), 590 / 71)

    @pytest.mark.parametrize("n", [0, 1, 2.5])
    def test_rejects_bad_point_count(self, n):
        with pytest.raises(DomainError):
            LaneGrid(n, 10, 10)


class TestLane:
    def test_from_xs_marks_nan_invalid(self, grid100):
        lane = Lane.from_xs(grid100, [np.nan, 1, 2, 3, np.nan])
        assert lane.valid.tolist() == [False, True, True, True, False]
        assert lane.xs[0] == INVALID_X

    def test_non_contiguous_rows_rejected(self, grid100):
        with pytest.raises(DomainError):
            Lane.from_xs(grid100, [1, np.nan, 2, 3, 4])

    def test_wrong_length_rejected(self, grid100):
        with pytest.raises(DimensionError):
            Lane.from_xs(grid100, [1, 2, 3])

    def test_is_immutable(self, grid100):
        lane = Lane.from_xs(grid100, [1, 2, 3, 4, 5])
        with pytest.raises(ValueError):
            lane.xs[0] = 7.0


class TestDecodePrior:
    def test_vertical_zero_offsets(self, grid100):
        lane = decode_prior(straight_prior(5), grid100)
        assert lane.valid.all()
        np.testing.assert_allclose(lane.xs, 50.0, atol=1e-9)

    def test_constant_offset_shift(self, grid100):
        lane = decode_prior(straight_prior(5, offsets=np.full(5, 5.0)), grid100)
        np.testing.assert_allclose(lane.xs, 55.0, atol=1e-9)

    def test_diagonal_ray_from_bottom_left(self, grid100):
        # theta = 45 deg from (0, H): moving up by dy moves right by dy.
        # rows y = 0, 25, 50, 75, 100 -> x = 100, 75, 50, 25, 0; x = 100 is off-image
        lane = decode_prior(straight_prior(5, start_x=0.0, theta=math.pi / 4), grid100)
        assert lane.valid.tolist() == [False, True, True, True, True]
        np.testing.assert_allclose(lane.xs[1:], [75.0, 50.0, 25.0, 0.0], atol=1e-9)

    def test_diagonal_ray_from_top_left(self, grid100):
        # start (0, 0): only the top row lies at or above the start point
        lane = decode_prior(straight_prior(5, 0.0, 0.0, math.pi / 4), grid100)
        assert lane.valid.tolist() == [True, False, False, False, False]
        assert lane.xs[0] == pytest.approx(0.0)

    def test_length_limits_rows_from_start(self, grid100):
        lane = decode_prior(straight_prior(5, length=2.4), grid100)
        assert lane.valid.tolist() == [False, False, False, True, True]

    def test_start_mid_image(self, grid100):
        lane = decode_prior(straight_prior(5, start_y=0.6), grid100)
        # y = 60 lies between rows 2 (y=50) and 3 (y=75); row 2 is the first at or above it
        assert lane.valid.tolist() == [True, True, True, False, False]

    def test_lane_ends_where_it_leaves_the_image(self, grid100):
        lane = decode_prior(straight_prior(5, start_x=0.9, theta=math.radians(60)), grid100)
        idx = np.flatnonzero(lane.valid)
        assert idx[-1] == 4 and idx.size < 5
        assert np.all(lane.xs[lane.valid] < 100)

    def test_lane_entering_from_the_side(self, grid100):
        # x = -30 + (100 - y): rows 4 and 3 (x = -30, -5) are left of the image
        lane = decode_prior(straight_prior(5, start_x=-0.3, theta=math.pi / 4), grid100)
        assert lane.valid.tolist() == [True, True, True, False, False]
        np.testing.assert_allclose(lane.xs[:3], [70.0, 45.0, 20.0], atol=1e-9)

    def test_mismatched_point_count(self, grid100):
        with pytest.raises(DimensionError):
            decode_prior(straight_prior(6), grid100)

    @settings(max_examples=60, deadline=None)
    @given(
        delta=st.floats(-20, 20),
        theta=st.floats(math.radians(40), math.radians(140)),
        start_x=st.floats(0.3, 0.7),
    )
    def test_translation_consistency(self, delta, theta, start_x):
        grid = LaneGrid(12, 300, 3000)
        base = decode_prior(straight_prior(12, start_x, theta=theta), grid)
        moved = decode_prior(straight_prior(12, start_x, theta=theta, offsets=np.full(12, delta)), grid)
        both = base.valid & moved.valid
        np.testing.assert_allclose(moved.xs[both] - base.xs[both], delta, atol=1e-9)

    def test_lane_params_roundtrip(self):
        grid = LaneGrid(20, 200, 400)
        prior = straight_prior(20, 0.4, theta=math.radians(70))
        sx, sy, th = lane_params(decode_prior(prior, grid))
        assert (sx, sy) == pytest.approx((0.4, 1.0))
        assert th == pytest.approx(math.radians(70))


class TestRasterize:
    def test_lane_outside_canvas_is_empty(self):
        grid = LaneGrid(5, 100, 100)
        lane = Lane.from_xs(grid, [90.0] * 5)
        assert not rasterize(lane, 10, (100, 60)).any()

    def test_vertical_lane_matches_distance_oracle(self):
        grid = LaneGrid(5, 100, 100)
        lane = vertical_lane(grid, 50.0)
        mask = rasterize(lane, 30, (100, 100))
        oracle = brute_rasterize(lane.points(), 30, (100, 100))
        assert mask.sum() == oracle.sum()
        assert np.array_equal(mask, oracle)
        # hand check: columns 35..65 on all 100 rows
        assert mask.sum() == 31 * 100

    def test_deterministic(self, rng):
        grid = LaneGrid(10, 100, 100)
        lane = Lane.from_xs(grid, rng.uniform(20, 80, 10))
        assert np.array_equal(rasterize(lane, 7, (100, 100)), rasterize(lane, 7, (100, 100)))

    def test_fewer_than_two_points_gives_empty_mask(self, grid100):
        lane = Lane.from_xs(grid100, [np.nan, np.nan, 40.0, np.nan, np.nan])
        assert not rasterize(lane, 30, (100, 100)).any()

    def test_line_width_below_one_rejected(self, grid100):
        with pytest.raises(DomainError):
            rasterize(vertical_lane(grid100, 50.0), 0.5, (100, 100))

    def test_random_polylines_match_oracle(self, rng):
        for _ in range(150):
            k = int(rng.integers(2, 7))
            pts = rng.uniform(-10, 60, (k, 2))
            w = float(rng.uniform(1, 16))
            got = rasterize_runs([pts], w, (50, 50)).to_masks()[0]
            assert np.array_equal(got, brute_rasterize(pts, w, (50, 50)))

    def test_segment_order_does_not_matter(self, rng):
        pts = rng.uniform(0, 50, (6, 2))
        fwd = rasterize_runs([pts], 5, (50, 50)).to_masks()[0]
        rev = rasterize_runs([pts[::-1]], 5, (50, 50)).to_masks()[0]
        assert np.array_equal(fwd, rev)


class TestMaskIou:
    def test_identical(self):
        m = np.zeros((10, 10), bool)
        m[2:5, 3:7] = True
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((10, 10), bool)
        b = a.copy()
        a[0, 0] = b[9, 9] = True
        assert mask_iou(a, b) == 0.0

    def test_both_empty_is_zero(self):
        z = np.zeros((4, 4), bool)
        assert mask_iou(z, z) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mask_iou(np.zeros((3, 3)), np.zeros((3, 4)))

    def test_offset_vertical_lanes_match_pixel_oracle(self):
        grid = LaneGrid(5, 100, 100)
        a = rasterize(vertical_lane(grid, 50.0), 30, (100, 100))
        b = rasterize(vertical_lane(grid, 65.0), 30, (100, 100))
        assert mask_iou(a, b) == pytest.approx(pixel_iou(a, b), abs=1e-12)
        # columns 50..65 overlap (16) out of 35..80 (46)
        assert mask_iou(a, b) == pytest.approx(16 / 46)

    def test_symmetric_and_monotone_in_shift(self):
        grid = LaneGrid(5, 100, 200)
        base = rasterize(vertical_lane(grid, 60.0), 30, (100, 200))
        prev = 1.0
        for shift in range(0, 45, 3):
            moved = rasterize(vertical_lane(grid, 60.0 + shift), 30, (100, 200))
            v = mask_iou(base, moved)
            assert v == mask_iou(moved, base)
            assert v <= prev
            prev = v

    def test_runs_iou_equals_mask_iou(self, rng):
        polys = [rng.uniform(0, 80, (4, 2)) for _ in range(5)]
        runs = rasterize_runs(polys, 9, (80, 80))
        masks = runs.to_masks()
        ious = pairwise_runs_iou(runs, runs)
        for i in range(5):
            for j in range(5):
                assert ious[i, j] == pytest.approx(mask_iou(masks[i], masks[j]), abs=1e-12)


class TestResample:
    def test_linear_interpolation(self):
        grid = LaneGrid(5, 100, 100)
        lane = resample_polyline([[10, 100], [50, 0]], grid)
        np.testing.assert_allclose(lane.xs, [50, 40, 30, 20, 10])

    def test_rows_outside_extent_invalid(self):
        grid = LaneGrid(5, 100, 100)
        lane = resample_polyline([[10, 60], [20, 20]], grid)
        assert lane.valid.tolist() == [False, True, True, False, False]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mask_iou_is_one_only_for_equal_masks(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((6, 6)) < 0.4
    b = a.copy()
    if rng.random() < 0.5:
        i, j = rng.integers(0, 6, 2)
        b[i, j] = not b[i, j]
    if a.any() and b.any():
        assert (mask_iou(a, b) == 1.0) == np.array_equal(a, b)
        assert mask_iou(a, b) == mask_iou(b, a)
