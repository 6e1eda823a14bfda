import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from clrlane.geometry import Lane, LaneGrid  # noqa: E402


@pytest.fixture
def grid100():
    return LaneGrid(5, 100.0, 100.0)


@pytest.fixture
def culane_grid():
    return LaneGrid(72, 590.0, 1640.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def vertical_lane(grid, x, rows=None):
    xs = np.full(grid.n_points, np.nan)
    if rows is None:
        rows = slice(None)
    xs[rows] = x
    return Lane.from_xs(grid, xs)


def assignment_scene(seed, n_points=18):
    """Small random scene for the assignment oracle: <= 12 priors, <= 3 gts.

    Priors cluster around the ground truths with a per-prior noise scale so
    that dynamic k spans 1..4 and priors are contested.
    """
    from clrlane.geometry import LanePrior
    from clrlane.synth import random_gt_prior

    rng = np.random.default_rng(seed)
    grid = LaneGrid(n_points, 320.0, 800.0)
    gts = [random_gt_prior(rng, grid) for _ in range(int(rng.integers(1, 4)))]
    priors = []
    for _ in range(int(rng.integers(1, 13))):
        if rng.random() < 0.2:
            priors.append(random_gt_prior(rng, grid).replace(score=float(rng.random())))
            continue
        base = gts[int(rng.integers(len(gts)))]
        s = rng.choice([0.1, 0.5, 2.0])
        priors.append(LanePrior(
            float(rng.random()),
            float(np.clip(base.start_x + rng.normal(0, 0.02 * s), 0, 1)),
            base.start_y,
            float(base.theta + rng.normal(0, 0.03 * s)),
            float(base.length + rng.normal(0, 2 * s)),
            base.offsets + rng.normal(0, 3 * s, grid.n_points),
        ))
    return priors, gts, grid


def brute_assign_for(priors, gts, grid, **kwargs):
    from clrlane.geometry import decode_prior
    from oracles import brute_assign

    prior_xs = [decode_prior(p, grid).xs_or_nan() for p in priors]
    gt_xs = [decode_prior(g, grid).xs_or_nan() for g in gts]
    return brute_assign(
        prior_xs, [(p.start_x, p.start_y, p.theta) for p in priors], [p.score for p in priors],
        gt_xs, [(g.start_x, g.start_y, g.theta) for g in gts],
        grid.image_width, grid.image_height, **kwargs,
    )


H_SAMPLES = tuple(range(160, 710, 10))


def tusimple_pair(gt_xs, pred_xs, h_samples=H_SAMPLES):
    from clrlane.io_formats import TusimpleRecord

    def lanes(rows):
        return [np.asarray(r, dtype=np.float64) for r in rows]

    return (TusimpleRecord("img.jpg", tuple(h_samples), lanes(pred_xs)),
            TusimpleRecord("img.jpg", tuple(h_samples), lanes(gt_xs)))


def tusimple_perfect():
    n = len(H_SAMPLES)
    gts = [np.linspace(300, 500, n), np.linspace(700, 720, n)]
    return tusimple_pair(gts, gts)


def tusimple_offset(px=25.0):
    n = len(H_SAMPLES)
    gts = [np.linspace(300, 500, n), np.linspace(700, 720, n)]
    return tusimple_pair(gts, [g + px for g in gts])


def tusimple_mixed():
    """Ten rows. Lane A: 9 of 10 points within 20 px (detected, 0.9 > 0.85).
    Lane B: 5 of 10 within 20 px (missed). Two predictions, one of them
    unused as a detection.

    accuracy = (9 + 5) / 20 = 0.7, FP = 1/2, FN = 1/2.
    """
    h = tuple(range(300, 400, 10))
    a = np.full(10, 200.0)
    b = np.full(10, 600.0)
    pa = a.copy()
    pa[0] += 21.0
    pa[1:] += 20.0  # the tolerance is inclusive
    pb = b.copy()
    pb[5:] += 40.0
    return tusimple_pair([a, b], [pa, pb], h)


def iou_062_lanes():
    """Two full-height vertical lanes whose line-mode IoU at width 30 is 0.62.

    (30 - d) / (30 + d) = 0.62 gives d = 30 * 0.38 / 1.62.
    """
    grid = LaneGrid(10, 100.0, 400.0)
    d = 30 * 0.38 / 1.62
    return grid, vertical_lane(grid, 150.0), vertical_lane(grid, 150.0 + d)


def random_culane_lanes(rng, max_lanes=4):
    lanes = []
    for _ in range(int(rng.integers(0, max_lanes + 1))):
        k = int(rng.integers(2, 30))
        ys = np.sort(rng.choice(np.arange(0, 590, 1.0), k, replace=False))[::-1]
        ys = ys + rng.uniform(0, 0.9, k)  # sub-pixel, still strictly decreasing
        xs = rng.uniform(-50, 1700, k)
        lanes.append(np.column_stack([xs, ys]))
    return lanes


def random_tusimple_record(rng):
    from clrlane.io_formats import TusimpleRecord

    start = int(rng.integers(0, 300))
    h = tuple(range(start, 720, int(rng.integers(5, 20))))
    lanes = []
    for _ in range(int(rng.integers(0, 6))):
        xs = rng.integers(-100, 1380, len(h)).astype(np.float64)
        xs[rng.random(len(h)) < 0.3] = np.nan
        xs[xs == -2] = -3  # -2 is the absent marker
        lanes.append(xs)
    run_time = None if rng.random() < 0.3 else int(rng.integers(1, 200))
    return TusimpleRecord(f"clips/{int(rng.integers(1e6))}/20.jpg", h, lanes, run_time)
