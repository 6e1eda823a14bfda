import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clrlane.errors import ConfigError, DimensionError, FormatError
from clrlane.geometry import LaneGrid, mask_iou, rasterize
from clrlane.metrics import (
    DEFAULT_THRESHOLDS, EvalConfig, counts_from_ious, category_report, evaluate_dataset,
    evaluate_image, f1_curve, lane_iou_matrix, match_iou_matrix, match_lanes,
    tusimple_eval, tusimple_image_counts,
)
from clrlane.synth import synth_eval_images
from conftest import (
    iou_062_lanes, tusimple_mixed, tusimple_offset, tusimple_pair, tusimple_perfect,
    vertical_lane,
)
from oracles import brute_matching


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"iou_mode": "box"}, {"thresholds": (0.5, 0.5)}, {"thresholds": (1.2,)},
        {"thresholds": ()}, {"line_width": 0}, {"tusimple_point_frac": 2},
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            EvalConfig(**kw)

    def test_default_thresholds(self):
        assert DEFAULT_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


class TestMatching:
    def test_strict_vs_inclusive(self):
        ious = [[0.5]]
        assert match_iou_matrix(ious, 0.5).tp == 0
        assert match_iou_matrix(ious, 0.5, inclusive=True).tp == 1

    def test_prefers_larger_total(self):
        ious = np.array([[0.9, 0.8], [0.85, 0.1]])
        res = match_iou_matrix(ious, 0.5)
        assert sorted(res.pairs) == [(0, 1), (1, 0)]
        assert (res.tp, res.fp, res.fn) == (2, 0, 0)

    def test_empty_sides(self):
        assert (match_iou_matrix(np.zeros((0, 3)), 0.5).fn) == 3
        assert (match_iou_matrix(np.zeros((2, 0)), 0.5).fp) == 2

    def test_rejects_non_matrix(self):
        with pytest.raises(DimensionError):
            match_iou_matrix([0.5, 0.6], 0.5)

    def test_against_permutation_oracle(self, rng):
        for _ in range(100):
            p, g = rng.integers(0, 5, 2)
            ious = rng.uniform(0, 1, (p, g))
            t = float(rng.choice(DEFAULT_THRESHOLDS))
            res = match_iou_matrix(ious, t)
            assert (res.tp, res.fp, res.fn) == brute_matching(ious, t)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 2**31))
    def test_counts_add_up(self, p, g, seed):
        ious = np.random.default_rng(seed).uniform(0, 1, (p, g))
        res = match_iou_matrix(ious, 0.5)
        assert res.tp + res.fp == p and res.tp + res.fn == g
        assert res.tp <= min(p, g)

    def test_match_lanes_uses_given_iou(self):
        res = match_lanes(["a"], ["b", "c"], lambda a, b: np.array([[0.2, 0.7]]), 0.5)
        assert res.pairs == [(0, 1)]


class TestF1:
    def test_iou_062_matrix_fixture(self):
        report = f1_curve([counts_from_ious([[0.62]])])
        assert report.f1.tolist() == [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
        assert report.mf1 == pytest.approx(0.3, abs=1e-15)

    def test_iou_062_lane_fixture(self):
        grid, gt, pred = iou_062_lanes()
        cfg = EvalConfig(iou_mode="line")
        assert lane_iou_matrix([pred], [gt], cfg)[0, 0] == pytest.approx(0.62)
        report, _ = evaluate_dataset([([pred], [gt])], cfg)
        assert report.mf1 == pytest.approx(0.3, abs=1e-15)

    def test_zero_when_nothing_found(self):
        report = f1_curve([counts_from_ious(np.zeros((0, 2)))])
        assert report.mf1 == 0.0 and report.recall.tolist() == [0.0] * 10

    def test_micro_average_over_images(self):
        a = counts_from_ious([[0.9]], (0.5,))
        b = counts_from_ious([[0.1, 0.2]], (0.5,))
        r = f1_curve([a, b], (0.5,))
        # TP 1, FP 1, FN 2
        assert r.precision[0] == 0.5 and r.recall[0] == pytest.approx(1 / 3)
        assert r.f1[0] == pytest.approx(0.4)

    def test_f1_at_and_table(self):
        r = f1_curve([counts_from_ious([[0.7]])])
        # 0.7 does not exceed the 0.70 threshold
        assert r.f1_at(0.65) == 1.0 and r.f1_at(0.7) == 0.0
        assert "mF1 = 0.4000" in r.table()
        with pytest.raises(KeyError):
            r.f1_at(0.52)

    def test_f1_non_increasing_in_threshold(self):
        grid = LaneGrid(20, 590, 1640)
        images = synth_eval_images(3, 40, grid)
        report, _ = evaluate_dataset(images, EvalConfig(iou_mode="line"))
        assert np.all(np.diff(report.tp) <= 0)
        assert np.all(np.diff(report.f1) <= 1e-12)

    def test_threshold_count_mismatch(self):
        with pytest.raises(DimensionError):
            f1_curve([counts_from_ious([[0.7]], (0.5,))])


class TestLaneIou:
    def test_mask_mode_matches_rasterized_masks(self, rng):
        grid = LaneGrid(8, 120, 200)
        preds = [vertical_lane(grid, x) for x in (50.0, 90.0)]
        gts = [vertical_lane(grid, x) for x in (55.0, 150.0, 60.0)]
        m = lane_iou_matrix(preds, gts, EvalConfig(line_width=20))
        for i, p in enumerate(preds):
            for j, g in enumerate(gts):
                want = mask_iou(rasterize(p, 20, (120, 200)), rasterize(g, 20, (120, 200)))
                assert m[i, j] == pytest.approx(want, abs=1e-12)

    def test_identical_lanes_score_one(self):
        grid = LaneGrid(8, 120, 200)
        lanes = [vertical_lane(grid, 70.0)]
        for mode in ("mask", "line"):
            assert lane_iou_matrix(lanes, lanes, EvalConfig(iou_mode=mode))[0, 0] == 1.0

    def test_mixed_grids_rejected(self):
        a = vertical_lane(LaneGrid(5, 100, 100), 50.0)
        b = vertical_lane(LaneGrid(5, 100, 120), 50.0)
        with pytest.raises(DimensionError):
            lane_iou_matrix([a], [b])

    def test_perfect_predictions(self):
        grid = LaneGrid(18, 590, 1640)
        images = [(g, g) for _, g in synth_eval_images(1, 10, grid)]
        report, _ = evaluate_dataset(images)
        assert report.mf1 == 1.0

    def test_parallel_equals_serial(self):
        grid = LaneGrid(18, 590, 1640)
        images = synth_eval_images(2, 12, grid)
        a, _ = evaluate_dataset(images, jobs=1)
        b, _ = evaluate_dataset(images, jobs=2)
        assert a.tp.tolist() == b.tp.tolist() and a.fp.tolist() == b.fp.tolist()


class TestCategories:
    def test_groups_and_fp_only(self):
        grid = LaneGrid(10, 100, 200)
        lane = vertical_lane(grid, 100.0)
        per = [evaluate_image([lane], [lane]), evaluate_image([lane], []),
               evaluate_image([], [lane])]
        cats = category_report(per, ["normal", "cross", "mystery"], known={"normal", "cross"})
        assert set(cats) == {"normal", "cross", "uncategorized"}
        assert cats["cross"].fp_only
        assert "fp" in cats["cross"].as_dict()
        assert cats["normal"].mf1 == 1.0

    def test_dataset_with_categories(self):
        grid = LaneGrid(10, 100, 200)
        lane = vertical_lane(grid, 100.0)
        report, _ = evaluate_dataset([([lane], [lane])] * 2, categories=["a", None])
        assert set(report.categories) == {"a", "uncategorized"}
        assert "categories" in report.as_dict()

    def test_label_count_checked(self):
        with pytest.raises(DimensionError):
            category_report([], ["x"])


class TestTusimple:
    def test_perfect(self):
        pred, gt = tusimple_perfect()
        r = tusimple_eval([pred], [gt])
        assert (r.accuracy, r.fp, r.fn) == (1.0, 0.0, 0.0)

    def test_offset_25px(self):
        pred, gt = tusimple_offset(25.0)
        r = tusimple_eval([pred], [gt])
        assert (r.accuracy, r.fp, r.fn) == (0.0, 1.0, 1.0)

    def test_mixed_trace(self):
        pred, gt = tusimple_mixed()
        r = tusimple_eval([pred], [gt])
        c = r.counts
        assert (c.correct_points, c.gt_points, c.false_pred, c.n_pred, c.missed_gt, c.n_gt) \
            == (14, 20, 1, 2, 1, 2)
        assert (r.accuracy, r.fp, r.fn) == (0.7, 0.5, 0.5)

    def test_tolerance_is_inclusive(self):
        pred, gt = tusimple_offset(20.0)
        assert tusimple_eval([pred], [gt]).accuracy == 1.0

    def test_absent_points_ignored(self):
        n = 4
        g = np.array([100.0, 100.0, np.nan, np.nan])
        p = np.array([100.0, 100.0, 100.0, 100.0])
        c = tusimple_image_counts([p], [g])
        assert (c.correct_points, c.gt_points, c.missed_gt) == (2, 2, 0)

    def test_no_predictions(self):
        pred, gt = tusimple_pair([np.full(55, 300.0)], [])
        r = tusimple_eval([pred], [gt])
        assert (r.accuracy, r.fp, r.fn) == (0.0, 0.0, 1.0)

    def test_h_samples_mismatch(self):
        pred, gt = tusimple_perfect()
        pred2, _ = tusimple_pair([], [], h_samples=range(100, 200, 10))
        with pytest.raises(FormatError):
            tusimple_eval([pred2], [gt])

    def test_record_count_mismatch(self):
        pred, gt = tusimple_perfect()
        with pytest.raises(DimensionError):
            tusimple_eval([pred, pred], [gt])


def test_dataset_counts_balance():
    grid = LaneGrid(18, 590, 1640)
    images = synth_eval_images(9, 30, grid)
    report, _ = evaluate_dataset(images)
    n_pred = sum(len(p) for p, _ in images)
    n_gt = sum(len(g) for _, g in images)
    assert np.all(report.tp + report.fp == n_pred)
    assert np.all(report.tp + report.fn == n_gt)


def test_mask_and_line_modes_agree_on_near_vertical_lanes():
    from clrlane.geometry import Lane
    from clrlane.synth import near_vertical_lane

    rng = np.random.default_rng(21)
    grid = LaneGrid(72, 590, 1640)
    for _ in range(40):
        gt = near_vertical_lane(rng, grid, top_frac=(0.0, 0.1))
        xs = gt.xs_or_nan() + rng.uniform(-30, 30)
        xs[(xs < 0) | (xs >= 1640)] = np.nan
        pred = Lane.from_xs(grid, xs)
        mask = lane_iou_matrix([pred], [gt], EvalConfig("mask"))[0, 0]
        line = lane_iou_matrix([pred], [gt], EvalConfig("line"))[0, 0]
        assert abs(mask - line) < 0.02
