"""Line IoU between sampled lanes and its analytic gradient.

Each sampled point is widened into a horizontal segment of half-width
``e``. Per row the overlap ``d_o`` and union ``d_u`` of the two segments
are summed and the ratio of the sums is the Line IoU. ``d_o`` turns
negative once segments separate, which keeps the measure informative for
lanes that do not touch.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_1d, check_positive
from .errors import DimensionError, DomainError
from .geometry import Lane

DEFAULT_RADIUS = 15.0


@dataclass(frozen=True)
class LiouConfig:
    radius_e: float = DEFAULT_RADIUS
    union_rows: bool = False

    def __post_init__(self):
        check_positive(self.radius_e, "radius_e")


@dataclass(frozen=True)
class LiouResult:
    value: float
    per_point_overlap: np.ndarray
    per_point_union: np.ndarray
    grad_pred: np.ndarray
    rows: np.ndarray

    @property
    def loss(self):
        return 1.0 - self.value

    @property
    def grad_loss(self):
        return -self.grad_pred


def segment_iou(x_p, x_g, e):
    """Overlap and union lengths of ``[x_p - e, x_p + e]`` and ``[x_g - e, x_g + e]``.

    The overlap is negative when the segments are disjoint.
    """
    check_positive(e, "e")
    d_o = np.minimum(x_p + e, x_g + e) - np.maximum(x_p - e, x_g - e)
    d_u = np.maximum(x_p + e, x_g + e) - np.minimum(x_p - e, x_g - e)
    if np.ndim(d_o) == 0:
        return float(d_o), float(d_u)
    return d_o, d_u


def _as_xs(lane, name):
    if isinstance(lane, Lane):
        return lane.xs_or_nan()
    return check_1d(lane, name)


def _row_mask(valid_rows, n):
    mask = np.zeros(n, dtype=bool)
    rows = np.asarray(valid_rows)
    if rows.dtype == bool:
        if rows.shape != (n,):
            raise DimensionError(f"boolean valid_rows must have {n} entries")
        return rows.copy()
    rows = rows.astype(np.int64).ravel()
    if rows.size and (rows.min() < 0 or rows.max() >= n):
        raise DimensionError("valid_rows index out of range")
    mask[rows] = True
    return mask


def liou(pred, gt, valid_rows=None, e=DEFAULT_RADIUS, union_rows=False):
    """Line IoU of ``pred`` against ``gt`` with the gradient w.r.t. ``pred``.

    ``pred`` and ``gt`` are :class:`Lane` objects or x-arrays in which NaN
    marks an absent row. Without ``valid_rows`` the rows where both lanes
    exist are used. With ``union_rows`` rows where exactly one lane exists
    are added, each contributing ``d_o = -2e`` and ``d_u = 2e``.

    At ties ``x_p == x_g`` the gradient takes the ``x_p < x_g`` branch.
    """
    check_positive(e, "e")
    xp = _as_xs(pred, "pred")
    xg = _as_xs(gt, "gt")
    if xp.shape != xg.shape:
        raise DimensionError(f"pred and gt differ in length: {xp.size} vs {xg.size}")
    n = xp.size
    has_p, has_g = np.isfinite(xp), np.isfinite(xg)
    if valid_rows is None:
        both = has_p & has_g
    else:
        both = _row_mask(valid_rows, n)
        if np.any(both & ~(has_p & has_g)):
            raise DomainError("valid_rows selects a row where a lane is absent")
    one_sided = (has_p ^ has_g) if union_rows else np.zeros(n, dtype=bool)
    rows = both | one_sided
    if not rows.any():
        raise DomainError("no rows to compare")

    d_o = np.zeros(n)
    d_u = np.zeros(n)
    d_o[both], d_u[both] = segment_iou(xp[both], xg[both], e)
    d_o[one_sided] = -2.0 * e
    d_u[one_sided] = 2.0 * e

    overlap = d_o[rows].sum()
    union = d_u[rows].sum()
    value = overlap / union

    # d(d_o)/dx_p = +1, d(d_u)/dx_p = -1 left of gt; signs flip right of it
    sign = np.where(xp[both] > xg[both], -1.0, 1.0)
    grad = np.zeros(n)
    grad[both] = sign * (union + overlap) / union**2
    return LiouResult(float(value), d_o, d_u, grad, np.flatnonzero(rows))


def liou_loss(pred, gt, valid_rows=None, e=DEFAULT_RADIUS, union_rows=False):
    return liou(pred, gt, valid_rows=valid_rows, e=e, union_rows=union_rows).loss


def liou_matrix(xs_a, xs_b, e=DEFAULT_RADIUS, empty_value=np.nan):
    """Pairwise Line IoU between two stacks of x-arrays (NaN = absent).

    Pairs without a common row get ``empty_value``.
    """
    a = np.atleast_2d(np.asarray(xs_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(xs_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionError("x-array stacks have different row counts")
    pa, pb = a[:, None, :], b[None, :, :]
    both = np.isfinite(pa) & np.isfinite(pb)
    with np.errstate(invalid="ignore"):
        gap = np.abs(pa - pb)
    d_o = np.where(both, 2 * e - gap, 0.0).sum(axis=2)
    d_u = np.where(both, 2 * e + gap, 0.0).sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = d_o / d_u
    return np.where(both.any(axis=2), out, empty_value)


def line_iou_metric_matrix(xs_a, xs_b, e=DEFAULT_RADIUS):
    """Pairwise pixel-style Line IoU for evaluation, bounded to ``[0, 1]``.

    Per-row overlap is clipped at zero and rows where only one lane exists
    add that lane's ``2e`` to the union, so a lane covering half of another
    scores about one half.
    """
    a = np.atleast_2d(np.asarray(xs_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(xs_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionError("x-array stacks have different row counts")
    pa, pb = a[:, None, :], b[None, :, :]
    fa, fb = np.isfinite(pa), np.isfinite(pb)
    both = fa & fb
    with np.errstate(invalid="ignore"):
        gap = np.abs(pa - pb)
    inter = np.where(both, np.clip(2 * e - gap, 0.0, None), 0.0).sum(axis=2)
    union = (
        np.where(both, np.minimum(2 * e + gap, 4 * e), 0.0)
        + np.where(fa ^ fb, 2 * e, 0.0)
    ).sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
