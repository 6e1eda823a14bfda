"""scikit-learn compatible wrappers around the functional core.

Priors are passed as a 2-D array, one row per prior laid out as
``[score, start_x, start_y, theta, length, offset_0 .. offset_{N-1}]``;
lanes as ``(M, N)`` x-arrays with NaN for absent rows. All estimators
support ``get_params``/``set_params`` and ``clone``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_2d
from .assignment import AssignCostConfig, assign
from .errors import DimensionError
from .geometry import Lane, LaneGrid, LanePrior, decode_prior
from .head import FeatureMap, POOLED_SIZE, lane_nms, resize_feature_map, roi_gather
from .liou import DEFAULT_RADIUS
from .losses import FocalParams
from .metrics import DEFAULT_THRESHOLDS, EvalConfig, evaluate_dataset

PRIOR_HEAD = 5


def check_prior_matrix(X, n_points=None):
    X = check_2d(X, "X")
    if X.shape[1] < PRIOR_HEAD + 2:
        raise DimensionError(f"prior rows need >= {PRIOR_HEAD + 2} columns, got {X.shape[1]}")
    if n_points is not None and X.shape[1] != PRIOR_HEAD + n_points:
        raise DimensionError(
            f"expected {PRIOR_HEAD + n_points} columns for {n_points} points, got {X.shape[1]}"
        )
    return X


def priors_from_matrix(X):
    return [LanePrior.from_vector(row) for row in X]


def priors_to_matrix(priors):
    return np.stack([p.to_vector() for p in priors])


class _GridMixin:
    def _grid(self):
        return LaneGrid(self.n_points, self.image_height, self.image_width)


class PriorDecoder(_GridMixin, TransformerMixin, BaseEstimator):
    """Decode prior rows into ``(M, N)`` x-arrays (NaN where a lane is absent)."""

    def __init__(self, n_points=72, image_height=590.0, image_width=1640.0):
        self.n_points = n_points
        self.image_height = image_height
        self.image_width = image_width

    def fit(self, X, y=None):
        X = check_prior_matrix(X, self.n_points)
        self.grid_ = self._grid()
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        X = check_prior_matrix(X, self.n_points)
        if len(X) == 0:
            return np.empty((0, self.n_points))
        return np.stack([decode_prior(p, self.grid_).xs_or_nan() for p in priors_from_matrix(X)])


class LaneNMS(_GridMixin, BaseEstimator):
    """Score filtering plus greedy Line-IoU NMS; ``predict`` returns a keep mask."""

    def __init__(self, score_thresh=0.4, iou_thresh=0.5, radius_e=DEFAULT_RADIUS,
                 n_points=72, image_height=590.0, image_width=1640.0):
        self.score_thresh = score_thresh
        self.iou_thresh = iou_thresh
        self.radius_e = radius_e
        self.n_points = n_points
        self.image_height = image_height
        self.image_width = image_width

    def fit(self, X, y=None):
        check_prior_matrix(X, self.n_points)
        self.grid_ = self._grid()
        return self

    def predict(self, X):
        check_is_fitted(self, "grid_")
        X = check_prior_matrix(X, self.n_points)
        keep = np.zeros(len(X), dtype=bool)
        lanes = [decode_prior(p, self.grid_) for p in priors_from_matrix(X)]
        cand = [i for i, l in enumerate(lanes) if X[i, 0] > self.score_thresh and l.n_valid >= 2]
        if cand:
            xs = np.stack([lanes[i].xs_or_nan() for i in cand])
            for k in lane_nms(xs, X[cand, 0], self.iou_thresh, self.radius_e):
                keep[cand[k]] = True
        return keep

    def fit_predict(self, X, y=None):
        return self.fit(X).predict(X)


class DynamicKAssigner(_GridMixin, BaseEstimator):
    """Positive-sample assignment. ``fit(X, y)`` with ``y`` the ground-truth
    x-arrays; ``labels_`` holds the ground-truth index per prior (-1 = background)."""

    def __init__(self, w_sim=3.0, w_cls=1.0, k_max=4, one_to_one=False, focal_alpha=0.25,
                 focal_gamma=2.0, radius_e=DEFAULT_RADIUS, n_points=72,
                 image_height=590.0, image_width=1640.0):
        self.w_sim = w_sim
        self.w_cls = w_cls
        self.k_max = k_max
        self.one_to_one = one_to_one
        self.focal_alpha = focal_alpha
        self.focal_gamma = focal_gamma
        self.radius_e = radius_e
        self.n_points = n_points
        self.image_height = image_height
        self.image_width = image_width

    def fit(self, X, y):
        X = check_prior_matrix(X, self.n_points)
        y = np.asarray(y, dtype=np.float64).reshape(-1, self.n_points)
        grid = self._grid()
        cfg = AssignCostConfig(
            self.w_sim, self.w_cls, self.k_max, self.one_to_one,
            FocalParams(self.focal_alpha, self.focal_gamma), self.radius_e,
        )
        gts = [Lane.from_xs(grid, row) for row in y]
        self.assignment_ = assign(priors_from_matrix(X), gts, grid, cfg)
        self.labels_ = self.assignment_.prior_to_gt
        self.cost_matrix_ = self.assignment_.cost_matrix
        return self

    def fit_predict(self, X, y):
        return self.fit(X, y).labels_


class RoiGather(TransformerMixin, BaseEstimator):
    """Attention of prior features over a fixed feature map.

    ``fit`` takes a ``(C, H, W)`` map and keeps it resized to
    ``pooled_size``; ``transform`` maps ``(M, C)`` prior features to their
    enhanced ``(M, C)`` versions.
    """

    def __init__(self, pooled_size=POOLED_SIZE):
        self.pooled_size = pooled_size

    def fit(self, X, y=None):
        fmap = X if isinstance(X, FeatureMap) else FeatureMap(X)
        self.x_f_ = resize_feature_map(fmap, tuple(self.pooled_size)).flatten()
        self.n_features_in_ = fmap.channels
        return self

    def _check(self, X):
        check_is_fitted(self, "x_f_")
        return check_2d(X, "X", shape=(None, self.n_features_in_))

    def transform(self, X):
        return roi_gather(self._check(X).T, self.x_f_).output.T

    def attention(self, X):
        """``(M, HW)`` attention weights for prior features ``X``."""
        return roi_gather(self._check(X).T, self.x_f_).attention


class LaneEvaluator(_GridMixin, BaseEstimator):
    """F1/mF1 evaluation; ``score`` returns mF1.

    ``preds`` and ``gts`` are per-image lists of :class:`Lane` objects or of
    x-arrays on this evaluator's grid.
    """

    def __init__(self, iou_mode="mask", line_width=30.0, thresholds=DEFAULT_THRESHOLDS,
                 inclusive=False, n_points=72, image_height=590.0, image_width=1640.0,
                 n_jobs=1):
        self.iou_mode = iou_mode
        self.line_width = line_width
        self.thresholds = thresholds
        self.inclusive = inclusive
        self.n_points = n_points
        self.image_height = image_height
        self.image_width = image_width
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self.config_ = EvalConfig(self.iou_mode, self.line_width, tuple(self.thresholds),
                                  self.inclusive)
        self.grid_ = self._grid()
        return self

    def _lanes(self, image):
        out = []
        for lane in image:
            if not isinstance(lane, Lane):
                lane = Lane.from_xs(self.grid_, lane)
            if lane.grid != self.grid_:
                raise DimensionError("lane grid differs from the evaluator grid")
            out.append(lane)
        return out

    def evaluate(self, preds, gts):
        if not hasattr(self, "config_"):
            self.fit()
        if len(preds) != len(gts):
            raise DimensionError("preds and gts must list the same images")
        images = [(self._lanes(p), self._lanes(g)) for p, g in zip(preds, gts)]
        report, _ = evaluate_dataset(images, self.config_, jobs=self.n_jobs)
        self.report_ = report
        return report

    def score(self, preds, gts):
        return self.evaluate(preds, gts).mf1
