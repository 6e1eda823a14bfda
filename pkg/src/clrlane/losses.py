"""Classification and regression losses and their weighted total."""

from dataclasses import dataclass

import numpy as np

from ._validation import check_positive
from .errors import DomainError

PROB_EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha!r}")
        check_positive(self.gamma, "gamma", strict=False)


@dataclass(frozen=True)
class LossWeights:
    w_cls: float = 1.0
    w_xytl: float = 1.0
    w_liou: float = 2.0

    def __post_init__(self):
        for name in ("w_cls", "w_xytl", "w_liou"):
            check_positive(getattr(self, name), name, strict=False)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    cls: float
    xytl: float
    liou: float

    def as_dict(self):
        return {"total": self.total, "cls": self.cls, "xytl": self.xytl, "liou": self.liou}


def focal_loss(p, is_positive, params=FocalParams()):
    """Binary focal loss of foreground probability ``p``.

    ``p`` is clamped to ``[1e-7, 1 - 1e-7]`` before the log. Accepts scalars
    or arrays (``is_positive`` broadcasts).
    """
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    pos = np.asarray(is_positive, dtype=bool)
    a, g = params.alpha, params.gamma
    out = np.where(
        pos,
        -a * (1.0 - p) ** g * np.log(p),
        -(1.0 - a) * p**g * np.log1p(-p),
    )
    return float(out) if out.ndim == 0 else out


def smooth_l1(pred, target, beta=1.0):
    check_positive(beta, "beta")
    d = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64))
    out = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    return float(out) if out.ndim == 0 else out


def _mean(terms):
    arr = np.asarray(terms, dtype=np.float64).ravel()
    return float(arr.mean()) if arr.size else 0.0


def total_loss(cls_terms, xytl_terms, liou_terms, weights=LossWeights()):
    """Weighted sum of the three loss components.

    Each component is the mean of its terms; pass regression terms for
    assigned samples only. Empty components contribute zero.
    """
    cls, xytl, li = _mean(cls_terms), _mean(xytl_terms), _mean(liou_terms)
    total = weights.w_cls * cls + weights.w_xytl * xytl + weights.w_liou * li
    return LossBreakdown(total, cls, xytl, li)
