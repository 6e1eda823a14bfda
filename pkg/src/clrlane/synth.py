"""Seeded synthetic scenes: lanes, priors and feature maps.

Everything is a pure function of the seed, so fixture files written from
these scenes are byte-identical across runs.
"""

import json
import math
from pathlib import Path

import numpy as np

from ._validation import check_random_state
from .geometry import Lane, LaneGrid, LanePrior, decode_prior
from .head import FeatureMap


def random_gt_prior(rng, grid, curvature=40.0):
    """A plausible road lane: starts on the bottom edge, bends smoothly."""
    start_x = rng.uniform(0.15, 0.85)
    theta = rng.uniform(math.radians(35), math.radians(145))
    t = np.linspace(0.0, 1.0, grid.n_points)
    offsets = rng.uniform(-curvature, curvature) * (1.0 - t) ** 2
    length = rng.uniform(0.5, 1.0) * grid.n_points
    return LanePrior(1.0, start_x, 1.0, theta, length, offsets)


def near_vertical_lane(rng, grid, max_slope=0.15, top_frac=(0.0, 0.3)):
    """A straight, nearly vertical lane spanning most of the image height."""
    w, h = grid.image_width, grid.image_height
    x_bottom = rng.uniform(0.2 * w, 0.8 * w)
    slope = rng.uniform(-max_slope, max_slope)
    ys = grid.ys
    xs = x_bottom + slope * (h - ys)
    top = int(rng.uniform(*top_frac) * (grid.n_points - 1))
    # a straight line leaves [0, W) at most once on each side: rows stay contiguous
    valid = (np.arange(grid.n_points) >= top) & (xs >= 0) & (xs < w)
    return Lane(grid, xs, valid)


def synth_eval_image(rng, grid, max_lanes=4, noise=6.0, drop=0.1, spurious=0.1):
    """``(preds, gts)`` lanes for one image.

    Predictions jitter the ground truths by ``noise`` pixels; each is lost
    with probability ``drop`` and a spurious lane appears with probability
    ``spurious``.
    """
    n = int(rng.integers(1, max_lanes + 1))
    gts = [near_vertical_lane(rng, grid) for _ in range(n)]
    preds = []
    for g in gts:
        if rng.random() < drop:
            continue
        xs = g.xs_or_nan() + rng.normal(0, noise) + rng.normal(0, noise / 3, grid.n_points)
        xs[(xs < 0) | (xs >= grid.image_width)] = np.nan
        valid = np.isfinite(xs)
        if valid.sum() >= 2 and _contiguous(valid):
            preds.append(Lane.from_xs(grid, xs))
    if rng.random() < spurious:
        preds.append(near_vertical_lane(rng, grid))
    return preds, gts


def _contiguous(valid):
    idx = np.flatnonzero(valid)
    return idx.size == 0 or idx[-1] - idx[0] + 1 == idx.size


def synth_eval_images(seed, m, grid, **kwargs):
    rng = check_random_state(seed)
    return [synth_eval_image(rng, grid, **kwargs) for _ in range(m)]


def synth_feature_levels(rng, channels=64, sizes=((10, 25), (20, 50), (40, 100))):
    return [FeatureMap(rng.normal(0.0, 1.0, (channels, h, w))) for h, w in sizes]


def synth_scene(seed, grid=None, n_gts=3, n_priors=12, channels=8,
                level_sizes=((10, 25), (20, 50), (40, 100))):
    """Ground truths, perturbed priors and feature levels for head-math runs."""
    rng = check_random_state(seed)
    if grid is None:
        grid = LaneGrid(72, 320, 800)
    gts = [random_gt_prior(rng, grid) for _ in range(n_gts)]
    priors = []
    for j in range(n_priors):
        base = gts[j % n_gts] if n_gts and j < 2 * n_gts else random_gt_prior(rng, grid)
        priors.append(
            LanePrior(
                float(rng.uniform(0.0, 1.0)),
                float(np.clip(base.start_x + rng.normal(0, 0.03), 0, 1)),
                base.start_y,
                float(base.theta + rng.normal(0, 0.05)),
                float(base.length + rng.normal(0, 3)),
                base.offsets + rng.normal(0, 2.0, grid.n_points),
            )
        )
    levels = synth_feature_levels(rng, channels, level_sizes)
    return {"grid": grid, "gts": gts, "priors": priors, "levels": levels}


# ---------------------------------------------------------------------------
# JSON forms


def prior_to_json(p):
    return {
        "score": p.score, "start_x": p.start_x, "start_y": p.start_y,
        "theta": p.theta, "length": p.length, "offsets": [float(v) for v in p.offsets],
    }


def prior_from_json(obj):
    return LanePrior(
        obj["score"], obj["start_x"], obj["start_y"], obj["theta"], obj["length"],
        np.asarray(obj["offsets"], dtype=np.float64),
    )


def lane_to_json(lane):
    return {"xs": [float(x) if ok else None for x, ok in zip(lane.xs, lane.valid)]}


def xs_from_json(obj):
    """x-array from ``[..]`` or ``{"xs": [..]}``; ``null`` marks an absent row."""
    xs = obj["xs"] if isinstance(obj, dict) else obj
    return np.array([np.nan if v is None else float(v) for v in xs], dtype=np.float64)


def grid_to_json(grid):
    return {"n_points": grid.n_points, "image_height": grid.image_height,
            "image_width": grid.image_width}


def write_scene(scene, out_dir, seed):
    """Write ``scene.json`` and ``level_<t>.npy`` files; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = scene["grid"]
    doc = {
        "seed": seed,
        "grid": grid_to_json(grid),
        "priors": [prior_to_json(p) for p in scene["priors"]],
        "gt_priors": [prior_to_json(p) for p in scene["gts"]],
        "gts": [lane_to_json(decode_prior(p, grid)) for p in scene["gts"]],
        "levels": [],
    }
    paths = []
    for t, level in enumerate(scene["levels"]):
        name = f"level_{t}.npy"
        np.save(out / name, level.data, allow_pickle=False)
        doc["levels"].append({"file": name, "shape": list(level.data.shape)})
        paths.append(out / name)
    (out / "scene.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return [out / "scene.json"] + paths
