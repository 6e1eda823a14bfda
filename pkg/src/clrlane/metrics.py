"""Evaluation engine: F1 at IoU thresholds, mF1, TuSimple accuracy.

Precision and recall are micro-averaged: true/false positive counts are
summed over the whole dataset before any ratio is taken.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DimensionError, FormatError
from .geometry import RowRuns, pairwise_runs_iou, rasterize_runs
from .liou import line_iou_metric_matrix

DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
UNCATEGORIZED = "uncategorized"


@dataclass(frozen=True)
class EvalConfig:
    iou_mode: str = "mask"
    line_width: float = 30.0
    thresholds: tuple = DEFAULT_THRESHOLDS
    inclusive: bool = False
    """Count IoU equal to the threshold as a match."""
    tusimple_pixel_tol: float = 20.0
    tusimple_point_frac: float = 0.85

    def __post_init__(self):
        if self.iou_mode not in ("mask", "line"):
            raise ConfigError(f"iou_mode must be 'mask' or 'line', got {self.iou_mode!r}")
        th = tuple(float(t) for t in self.thresholds)
        if not th or any(not 0.0 < t < 1.0 for t in th):
            raise ConfigError("thresholds must lie in (0, 1)")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ConfigError("thresholds must be strictly increasing")
        object.__setattr__(self, "thresholds", th)
        if self.line_width < 1:
            raise ConfigError("line_width must be >= 1")
        if not 0.0 <= self.tusimple_point_frac <= 1.0:
            raise ConfigError("tusimple_point_frac must lie in [0, 1]")


# ---------------------------------------------------------------------------
# F1 family


def lane_iou_matrix(preds, gts, cfg=EvalConfig(), canvas=None):
    """IoU between every predicted and ground-truth lane, shape ``(P, G)``.

    ``mask`` mode rasterizes lanes ``line_width`` pixels thick on ``canvas``
    (defaults to the lanes' image size); ``line`` mode uses the bounded
    per-row Line IoU with half-width ``line_width / 2``.
    """
    if not preds or not gts:
        return np.zeros((len(preds), len(gts)))
    grid = gts[0].grid
    if any(l.grid != grid for l in list(preds) + list(gts)):
        raise DimensionError("all lanes must share one grid")
    if cfg.iou_mode == "line":
        return line_iou_metric_matrix(
            np.stack([l.xs_or_nan() for l in preds]),
            np.stack([l.xs_or_nan() for l in gts]),
            e=cfg.line_width / 2.0,
        )
    if canvas is None:
        canvas = (math.ceil(grid.image_height), math.ceil(grid.image_width))
    runs = rasterize_runs([l.points() for l in list(preds) + list(gts)], cfg.line_width, canvas)
    k = len(preds)
    a = RowRuns(runs.lo[:k], runs.hi[:k], runs.width)
    b = RowRuns(runs.lo[k:], runs.hi[k:], runs.width)
    return pairwise_runs_iou(a, b)


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list


def match_iou_matrix(ious, threshold, inclusive=False):
    """One-to-one matching of a ``(P, G)`` IoU matrix at ``threshold``.

    Pairs at or below the threshold (strictly below when ``inclusive``)
    are ineligible; among the rest the matching of maximal total IoU wins.
    """
    ious = np.asarray(ious, dtype=np.float64)
    if ious.ndim != 2:
        raise DimensionError(f"IoU matrix must be 2-D, got shape {ious.shape}")
    n_p, n_g = ious.shape
    eligible = ious >= threshold if inclusive else ious > threshold
    pairs = []
    if n_p and n_g and eligible.any():
        weights = np.where(eligible, ious, 0.0)
        rows, cols = linear_sum_assignment(weights, maximize=True)
        pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if eligible[r, c]]
    tp = len(pairs)
    return MatchResult(tp, n_p - tp, n_g - tp, pairs)


def match_lanes(preds, gts, iou_fn, threshold, inclusive=False):
    """Match lanes with ``iou_fn(preds, gts) -> (P, G)`` and count TP/FP/FN."""
    ious = iou_fn(preds, gts) if preds and gts else np.zeros((len(preds), len(gts)))
    return match_iou_matrix(ious, threshold, inclusive)


@dataclass(frozen=True)
class ImageCounts:
    """Per-threshold counts for one image."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    def __add__(self, other):
        return ImageCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def counts_from_ious(ious, thresholds=DEFAULT_THRESHOLDS, inclusive=False):
    res = [match_iou_matrix(ious, t, inclusive) for t in thresholds]
    return ImageCounts(
        np.array([r.tp for r in res]), np.array([r.fp for r in res]), np.array([r.fn for r in res])
    )


def evaluate_image(preds, gts, cfg=EvalConfig(), canvas=None):
    ious = lane_iou_matrix(preds, gts, cfg, canvas)
    return counts_from_ious(ious, cfg.thresholds, cfg.inclusive)


def _f1(tp, fp, fn):
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(
            precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0
        )
    return precision, recall, f1


@dataclass(frozen=True)
class EvalReport:
    thresholds: tuple
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    fp_only: bool = False
    categories: dict = field(default_factory=dict)

    @property
    def mf1(self):
        return float(np.mean(self.f1))

    def f1_at(self, threshold):
        idx = [i for i, t in enumerate(self.thresholds) if math.isclose(t, threshold)]
        if not idx:
            raise KeyError(threshold)
        return float(self.f1[idx[0]])

    def as_dict(self):
        if self.fp_only:
            out = {"fp": {_key(t): int(v) for t, v in zip(self.thresholds, self.fp)}}
        else:
            out = {
                "mF1": self.mf1,
                "per_threshold": {
                    _key(t): {
                        "tp": int(tp), "fp": int(fp), "fn": int(fn),
                        "precision": float(p), "recall": float(r), "f1": float(f),
                    }
                    for t, tp, fp, fn, p, r, f in zip(
                        self.thresholds, self.tp, self.fp, self.fn,
                        self.precision, self.recall, self.f1,
                    )
                },
            }
        if self.categories:
            out["categories"] = {k: v.as_dict() for k, v in self.categories.items()}
        return out

    def table(self):
        lines = [f"{'IoU':>6} {'TP':>7} {'FP':>7} {'FN':>7} {'Prec':>7} {'Rec':>7} {'F1':>7}"]
        for t, tp, fp, fn, p, r, f in zip(
            self.thresholds, self.tp, self.fp, self.fn, self.precision, self.recall, self.f1
        ):
            if self.fp_only:
                lines.append(f"{t:>6.2f} {'-':>7} {fp:>7d} {'-':>7} {'-':>7} {'-':>7} {'-':>7}")
            else:
                lines.append(
                    f"{t:>6.2f} {tp:>7d} {fp:>7d} {fn:>7d} {p:>7.4f} {r:>7.4f} {f:>7.4f}"
                )
        if not self.fp_only:
            lines.append(f"mF1 = {self.mf1:.4f}")
        return "\n".join(lines)


def _key(t):
    return f"{t:.2f}"


def f1_curve(per_image, thresholds=DEFAULT_THRESHOLDS, fp_only=False):
    """Aggregate per-image counts into an :class:`EvalReport`."""
    n = len(thresholds)
    total = ImageCounts(np.zeros(n, int), np.zeros(n, int), np.zeros(n, int))
    for counts in per_image:
        if len(counts.tp) != n:
            raise DimensionError("per-image counts do not match the threshold list")
        total = total + counts
    p, r, f = _f1(total.tp, total.fp, total.fn)
    return EvalReport(tuple(thresholds), total.tp, total.fp, total.fn, p, r, f, fp_only)


def category_report(per_image, categories, thresholds=DEFAULT_THRESHOLDS,
                    known=None, fp_only=("cross",)):
    """Per-category reports; categories whose name contains an ``fp_only``
    token report false positives only. Labels that are ``None`` or outside
    ``known`` go under ``"uncategorized"``."""
    if len(per_image) != len(categories):
        raise DimensionError("one category label per image is required")
    groups = {}
    for counts, label in zip(per_image, categories):
        if label is None or (known is not None and label not in known):
            label = UNCATEGORIZED
        groups.setdefault(label, []).append(counts)
    return {
        label: f1_curve(items, thresholds, fp_only=any(tok in label for tok in fp_only))
        for label, items in sorted(groups.items())
    }


def _eval_task(args):
    preds, gts, cfg, canvas = args
    return evaluate_image(preds, gts, cfg, canvas)


def evaluate_dataset(images, cfg=EvalConfig(), canvas=None, jobs=1, categories=None,
                     known_categories=None):
    """Evaluate ``[(preds, gts), ...]`` and return an :class:`EvalReport`.

    With ``jobs > 1`` images are spread over a process pool; results are
    reduced in input order. ``categories`` (one label per image) adds
    per-category sub-reports.
    """
    tasks = [(p, g, cfg, canvas) for p, g in images]
    if jobs > 1 and len(tasks) > 1:
        chunk = max(1, len(tasks) // (jobs * 4))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_image = list(pool.map(_eval_task, tasks, chunksize=chunk))
    else:
        per_image = [_eval_task(t) for t in tasks]
    report = f1_curve(per_image, cfg.thresholds)
    if categories is not None:
        cats = category_report(per_image, categories, cfg.thresholds, known_categories)
        report = EvalReport(**{**report.__dict__, "categories": cats})
    return report, per_image


# ---------------------------------------------------------------------------
# TuSimple


@dataclass(frozen=True)
class TusimpleCounts:
    correct_points: int = 0
    gt_points: int = 0
    false_pred: int = 0
    n_pred: int = 0
    missed_gt: int = 0
    n_gt: int = 0

    def __add__(self, o):
        return TusimpleCounts(*(a + b for a, b in zip(self.__dict__.values(), o.__dict__.values())))


@dataclass(frozen=True)
class TusimpleResult:
    accuracy: float
    fp: float
    fn: float
    counts: TusimpleCounts

    def as_dict(self):
        return {"accuracy": self.accuracy, "fp": self.fp, "fn": self.fn, **self.counts.__dict__}


def tusimple_image_counts(pred_lanes, gt_lanes, cfg=EvalConfig()):
    """Point and lane counts for one image.

    Lanes are x-arrays on the image's ``h_samples`` with NaN for absent
    points. Each ground-truth lane is scored against the prediction with
    the most points within ``tusimple_pixel_tol``; it counts as detected
    when that fraction of its points exceeds ``tusimple_point_frac``.
    Predictions not serving as the detection of any lane are false.
    """
    gts = [np.asarray(g, dtype=np.float64) for g in gt_lanes]
    preds = [np.asarray(p, dtype=np.float64) for p in pred_lanes]
    gts = [g for g in gts if np.isfinite(g).any()]
    preds = [p for p in preds if np.isfinite(p).any()]
    for lane in gts + preds:
        if gts and lane.shape != gts[0].shape:
            raise FormatError("lanes of one image must share the h_samples rows", key="h_samples")
    correct, total, missed = 0, 0, 0
    hits = set()
    for g in gts:
        g_ok = np.isfinite(g)
        n_pts = int(g_ok.sum())
        total += n_pts
        best, best_j = 0, None
        for j, p in enumerate(preds):
            with np.errstate(invalid="ignore"):
                close = g_ok & np.isfinite(p) & (np.abs(p - g) <= cfg.tusimple_pixel_tol)
            c = int(close.sum())
            if c > best:
                best, best_j = c, j
        correct += best
        if best_j is not None and best / n_pts > cfg.tusimple_point_frac:
            hits.add(best_j)
        else:
            missed += 1
    return TusimpleCounts(correct, total, len(preds) - len(hits), len(preds), missed, len(gts))


def tusimple_eval(preds, gts, cfg=EvalConfig()):
    """Dataset accuracy, FP rate and FN rate over aligned record lists.

    ``preds`` and ``gts`` are :class:`~clrlane.io_formats.TusimpleRecord`
    sequences in the same image order.
    """
    if len(preds) != len(gts):
        raise DimensionError("prediction and ground-truth record counts differ")
    total = TusimpleCounts()
    for p, g in zip(preds, gts):
        if list(p.h_samples) != list(g.h_samples):
            raise FormatError(
                f"h_samples of prediction for {g.raw_file!r} differ from ground truth",
                key="h_samples",
            )
        total = total + tusimple_image_counts(p.lanes, g.lanes, cfg)
    acc = total.correct_points / total.gt_points if total.gt_points else 0.0
    fp = total.false_pred / total.n_pred if total.n_pred else 0.0
    fn = total.missed_gt / total.n_gt if total.n_gt else 0.0
    return TusimpleResult(acc, fp, fn, total)
