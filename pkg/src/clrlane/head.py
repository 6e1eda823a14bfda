"""Forward math of the detection head on plain feature arrays.

Nothing here is trained: regressors are callables with externally supplied
weights, and feature maps are whatever the caller provides (usually the
seeded synthetic scenes from :mod:`clrlane.synth`).
"""

from dataclasses import dataclass, field
import math

import numpy as np

from ._validation import check_2d, check_finite, check_random_state
from .errors import ConfigError, DimensionError, DomainError
from .geometry import LaneGrid, LanePrior, decode_prior
from .liou import DEFAULT_RADIUS, liou_matrix

DEFAULT_N_SAMPLES = 36
POOLED_SIZE = (10, 25)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense ``(C, H, W)`` feature grid."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise DimensionError(f"feature map must be (C, H, W), got shape {data.shape}")
        check_finite(data, "feature map")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def flatten(self):
        return self.data.reshape(self.channels, -1)


@dataclass(frozen=True)
class RoiFeature:
    """Features sampled along a prior, shape ``(C, N_p)``, plus the sample points."""

    samples: np.ndarray
    xs: np.ndarray
    ys: np.ndarray

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]


def bilinear_sample(data, xs, ys):
    """Bilinearly interpolate ``data`` (C, H, W) at pixel coordinates.

    Points outside ``[0, W-1] x [0, H-1]`` read as zero.
    """
    c, h, w = data.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    x = np.where(inside, xs, 0.0)
    y = np.where(inside, ys, 0.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    out = (
        data[:, y0, x0] * (1 - fx) * (1 - fy)
        + data[:, y0, x1] * fx * (1 - fy)
        + data[:, y1, x0] * (1 - fx) * fy
        + data[:, y1, x1] * fx * fy
    )
    return np.where(inside, out, 0.0)


def resize_feature_map(fmap, size=POOLED_SIZE):
    """Bilinear resize to ``(h, w)`` with corner pixels aligned."""
    h, w = size
    ys = np.linspace(0, fmap.height - 1, h) if h > 1 else np.zeros(1)
    xs = np.linspace(0, fmap.width - 1, w) if w > 1 else np.zeros(1)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    out = bilinear_sample(fmap.data, gx.ravel(), gy.ravel())
    return FeatureMap(out.reshape(fmap.channels, h, w))


def sample_roi(prior, fmap, n_p=DEFAULT_N_SAMPLES, grid=None):
    """Sample ``n_p`` points evenly along the prior's valid rows.

    ``grid`` is the image frame the prior lives in. Its corners map onto
    the corner pixels of the feature map, so the bottom row ``y = H`` lands
    on the last feature row. Without it the prior is taken to be in
    feature-map pixels.
    """
    if n_p < 1:
        raise DomainError("n_p must be positive")
    if grid is None:
        grid = LaneGrid(prior.n_points, max(fmap.height - 1, 1), max(fmap.width - 1, 1))
    lane = decode_prior(prior, grid)
    idx = np.flatnonzero(lane.valid)
    if idx.size == 0:
        raise DomainError("prior has no valid extent on this grid")
    t = np.linspace(idx[0], idx[-1], n_p)
    rows = np.arange(grid.n_points)
    px = np.interp(t, rows[idx], lane.xs[idx])
    py = t * grid.row_step
    fx = px * (fmap.width - 1) / grid.image_width
    fy = py * (fmap.height - 1) / grid.image_height
    return RoiFeature(bilinear_sample(fmap.data, fx, fy), fx, fy)


@dataclass(frozen=True)
class RoiGatherResult:
    output: np.ndarray
    attention: np.ndarray
    gathered: np.ndarray


def _softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def roi_gather(x_p, x_f):
    """Enhance prior features with attention over the flattened feature map.

    ``x_p`` is ``(C,)`` or ``(C, M)`` for ``M`` priors; ``x_f`` is a
    :class:`FeatureMap` or a ``(C, HW)`` array. Attention rows
    ``softmax(x_p^T x_f / sqrt(C))`` weight the map columns and the gathered
    feature is added back to ``x_p``.
    """
    if isinstance(x_f, FeatureMap):
        x_f = x_f.flatten()
    x_f = check_2d(x_f, "x_f")
    x_p = np.asarray(x_p, dtype=np.float64)
    vector = x_p.ndim == 1
    xp2 = x_p[:, None] if vector else x_p
    if xp2.ndim != 2 or xp2.shape[0] != x_f.shape[0]:
        raise DimensionError(
            f"channel mismatch: x_p {x_p.shape} vs x_f {x_f.shape}"
        )
    channels = x_f.shape[0]
    attention = _softmax(xp2.T @ x_f / math.sqrt(channels), axis=1)
    gathered = (attention @ x_f.T).T
    output = xp2 + gathered
    if vector:
        return RoiGatherResult(output[:, 0], attention[0], gathered[:, 0])
    return RoiGatherResult(output, attention, gathered)


# ---------------------------------------------------------------------------
# regressors


def delta_size(n_points):
    """Regressor output length: start x, start y, theta, length, N offsets."""
    return n_points + 4


class ZeroRegressor:
    def __init__(self, n_out):
        self.n_out = n_out

    def __call__(self, feature):
        return np.zeros(self.n_out)


class ConstantRegressor:
    def __init__(self, delta):
        self.delta = np.asarray(delta, dtype=np.float64)

    def __call__(self, feature):
        return self.delta.copy()


class TwoLayerRegressor:
    """``w2 @ relu(w1 @ x + b1) + b2``."""

    def __init__(self, w1, b1, w2, b2):
        self.w1 = check_2d(w1, "w1")
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = check_2d(w2, "w2", shape=(None, self.w1.shape[0]))
        self.b2 = np.asarray(b2, dtype=np.float64)

    @classmethod
    def random(cls, in_dim, hidden, out_dim, seed, scale=0.01):
        rng = check_random_state(seed)
        return cls(
            rng.normal(0, scale, (hidden, in_dim)),
            rng.normal(0, scale, hidden),
            rng.normal(0, scale, (out_dim, hidden)),
            rng.normal(0, scale, out_dim),
        )

    def __call__(self, feature):
        h = np.maximum(self.w1 @ feature + self.b1, 0.0)
        return self.w2 @ h + self.b2


def apply_deltas(prior, deltas):
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.shape != (delta_size(prior.n_points),):
        raise DimensionError(
            f"regressor must return {delta_size(prior.n_points)} values, got {deltas.shape}"
        )
    return prior.replace(
        start_x=prior.start_x + deltas[0],
        start_y=prior.start_y + deltas[1],
        theta=prior.theta + deltas[2],
        length=prior.length + deltas[3],
        offsets=prior.offsets + deltas[4:],
    )


def block_average_fusion(channels, n_levels):
    """``(C, n_levels * C)`` map averaging stacked per-level ROI features."""
    return np.tile(np.eye(channels), (1, n_levels)) / n_levels


@dataclass(frozen=True)
class RefineStep:
    prior: LanePrior
    roi: RoiFeature
    pooled: np.ndarray
    enhanced: np.ndarray
    deltas: np.ndarray


def refine(prior, level, regressor, n_p=DEFAULT_N_SAMPLES, grid=None, prev_rois=(),
           fusion=None, pool_weights=None, pooled_size=POOLED_SIZE):
    """One refinement step on feature level ``level``.

    The ROI feature of this level is stacked under ``prev_rois`` along the
    channel axis and mapped back to ``C`` channels by ``fusion`` (block
    average by default), pooled over samples with ``pool_weights`` (mean by
    default), enhanced by :func:`roi_gather` against the resized level and
    fed to ``regressor``, whose output is added to the prior parameters.
    """
    roi = sample_roi(prior, level, n_p, grid)
    stacked = np.concatenate([r.samples for r in prev_rois] + [roi.samples], axis=0)
    n_levels = len(prev_rois) + 1
    if fusion is None:
        fusion = block_average_fusion(level.channels, n_levels)
    fusion = check_2d(fusion, "fusion", shape=(level.channels, stacked.shape[0]))
    fused = fusion @ stacked
    if pool_weights is None:
        pool_weights = np.full(n_p, 1.0 / n_p)
    pooled = fused @ np.asarray(pool_weights, dtype=np.float64)
    x_f = resize_feature_map(level, pooled_size)
    enhanced = roi_gather(pooled, x_f).output
    deltas = np.asarray(regressor(enhanced), dtype=np.float64)
    return RefineStep(apply_deltas(prior, deltas), roi, pooled, enhanced, deltas)


@dataclass(frozen=True)
class RefinementConfig:
    num_refinements: int = 3
    regressors: object = None
    """A single regressor shared by every step, or a list of ``T``."""
    n_samples: int = DEFAULT_N_SAMPLES
    fusions: tuple = field(default=None)
    pooled_size: tuple = POOLED_SIZE

    def __post_init__(self):
        if self.num_refinements < 1:
            raise ConfigError("num_refinements must be >= 1")

    def regressor(self, t):
        if isinstance(self.regressors, (list, tuple)):
            if len(self.regressors) != self.num_refinements:
                raise ConfigError("need one regressor per refinement step")
            return self.regressors[t]
        return self.regressors

    def fusion(self, t):
        return None if self.fusions is None else self.fusions[t]


def refine_cascade(priors, levels, cfg, grid=None, return_trace=False):
    """Refine every prior through levels ``L_0 .. L_{T-1}`` in order.

    Step ``t`` (1-based) consumes level ``L_{t-1}`` and sees the ROI
    features of all earlier steps.
    """
    if len(levels) != cfg.num_refinements:
        raise ConfigError(
            f"expected {cfg.num_refinements} feature levels, got {len(levels)}"
        )
    if cfg.regressors is None:
        raise ConfigError("a regressor is required")
    out, traces = [], []
    for prior in priors:
        rois, steps = [], []
        current = prior
        for t, level in enumerate(levels):
            step = refine(
                current, level, cfg.regressor(t), n_p=cfg.n_samples, grid=grid,
                prev_rois=rois, fusion=cfg.fusion(t), pooled_size=cfg.pooled_size,
            )
            rois.append(step.roi)
            steps.append(step)
            current = step.prior
        out.append(current)
        traces.append(steps)
    return (out, traces) if return_trace else out


def uniform_priors(m, n_points, start_y=1.0, theta=math.pi / 2, length=None, score=0.0):
    """``m`` priors with start x evenly spread over ``[0, 1]``."""
    if m < 1:
        raise DomainError("m must be positive")
    length = float(n_points if length is None else length)
    xs = np.linspace(0.0, 1.0, m) if m > 1 else np.array([0.5])
    return [
        LanePrior(score, float(x), start_y, theta, length, np.zeros(n_points))
        for x in xs
    ]


# ---------------------------------------------------------------------------
# inference


def lane_nms(xs, scores, iou_thresh=0.5, e=DEFAULT_RADIUS):
    """Greedy NMS over lanes by descending score (ties: lower index first).

    ``xs`` is an ``(M, N)`` stack with NaN for absent rows. A lane is
    suppressed when its Line IoU with an already kept lane exceeds
    ``iou_thresh``; lanes without a common row never suppress each other.
    Returns kept indices in processing order.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(xs):
        raise DimensionError("one score per lane is required")
    if len(xs) == 0:
        return []
    overlap = np.nan_to_num(liou_matrix(xs, xs, e=e), nan=-np.inf)
    order = np.lexsort((np.arange(len(scores)), -scores))
    kept = []
    for i in order:
        if all(overlap[i, k] <= iou_thresh for k in kept):
            kept.append(int(i))
    return kept


def inference_filter(priors, grid, score_thresh=0.4, nms_iou_thresh=0.5, e=DEFAULT_RADIUS):
    """Keep priors scoring strictly above ``score_thresh``, then run NMS.

    Priors that decode to fewer than two valid rows are dropped. Returns
    ``(index, lane)`` pairs in descending score order.
    """
    lanes = [decode_prior(p, grid) for p in priors]
    cand = [
        i for i, (p, l) in enumerate(zip(priors, lanes))
        if p.score > score_thresh and l.n_valid >= 2
    ]
    if not cand:
        return []
    xs = np.stack([lanes[i].xs_or_nan() for i in cand])
    kept = lane_nms(xs, [priors[i].score for i in cand], nms_iou_thresh, e)
    return [(cand[k], lanes[cand[k]]) for k in kept]
