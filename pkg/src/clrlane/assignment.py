"""Dynamic top-k positive-sample assignment between priors and ground truths.

Costs are distances: 0 is a perfect match and smaller is better. The
similarity term is the squared product of three normalized sub-costs
(mean horizontal distance, start-point distance, angle difference), the
classification term is the focal loss of the prior's score against the
positive label.

Each ground truth ``g`` receives

    k_g = clip(round(sum of its k_max largest Line IoUs), 1, k_max)

priors. Candidate pairs are visited in ascending cost (ties: lower prior
index, then lower ground-truth index) and a pair is accepted when the prior
is still free and the ground truth still has room, so a contested prior
goes to the cheaper ground truth and the loser moves on to its next
candidate.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from ._validation import check_probability
from .errors import DomainError, DimensionError
from .geometry import Lane, LanePrior, decode_prior, lane_params
from .liou import DEFAULT_RADIUS, liou_matrix
from .losses import FocalParams, focal_loss


@dataclass(frozen=True)
class AssignCostConfig:
    w_sim: float = 3.0
    w_cls: float = 1.0
    k_max: int = 4
    one_to_one: bool = False
    focal: FocalParams = field(default_factory=FocalParams)
    radius_e: float = DEFAULT_RADIUS

    def __post_init__(self):
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise DomainError(f"k_max must be an integer >= 1, got {self.k_max!r}")
        if self.w_sim < 0 or self.w_cls < 0:
            raise DomainError("cost weights must be >= 0")


@dataclass(frozen=True)
class AssignmentResult:
    matches: list
    """Per ground truth, ``(prior index, cost)`` pairs in ascending cost."""
    prior_to_gt: np.ndarray
    """Ground-truth index per prior, ``-1`` for background."""
    cost_matrix: np.ndarray
    dynamic_k: np.ndarray

    @property
    def positive_mask(self):
        return self.prior_to_gt >= 0

    def as_dict(self):
        return {
            "matches": [[[int(j), float(c)] for j, c in m] for m in self.matches],
            "prior_to_gt": [int(v) for v in self.prior_to_gt],
            "dynamic_k": [int(v) for v in self.dynamic_k],
        }


def similarity_terms(pred_lane, pred_params, gt_lane, gt_params):
    """``(c_dis, c_xy, c_theta)``, each a distance clamped to ``[0, 1]``.

    ``*_params`` are ``(start_x, start_y, theta)`` with normalized start
    coordinates. Lanes without a common row get ``c_dis = 1``.
    """
    if pred_lane.grid != gt_lane.grid:
        raise DimensionError("lanes must share a grid")
    g = pred_lane.grid
    both = pred_lane.valid & gt_lane.valid
    if both.any():
        mean_dx = np.abs(pred_lane.xs[both] - gt_lane.xs[both]).mean()
        c_dis = min(mean_dx / g.image_width, 1.0)
    else:
        c_dis = 1.0
    dx = (pred_params[0] - gt_params[0]) * g.image_width
    dy = (pred_params[1] - gt_params[1]) * g.image_height
    c_xy = min(math.hypot(dx, dy) / math.hypot(g.image_width, g.image_height), 1.0)
    c_theta = min(abs(pred_params[2] - gt_params[2]) / math.pi, 1.0)
    return float(c_dis), float(c_xy), float(c_theta)


def similarity_cost(pred_lane, pred_params, gt_lane, gt_params):
    c_dis, c_xy, c_theta = similarity_terms(pred_lane, pred_params, gt_lane, gt_params)
    return (c_dis * c_xy * c_theta) ** 2


def classification_cost(score, params=FocalParams()):
    check_probability(score, "score")
    return focal_loss(score, True, params)


def _gt_lane_and_params(gt, grid):
    if isinstance(gt, LanePrior):
        return decode_prior(gt, grid), (gt.start_x, gt.start_y, gt.theta)
    if isinstance(gt, Lane):
        if gt.grid != grid:
            raise DimensionError("ground-truth lane is on a different grid")
        return gt, lane_params(gt)
    raise TypeError(f"ground truth must be a Lane or LanePrior, got {type(gt).__name__}")


def cost_matrix(priors, gts, grid, cfg=AssignCostConfig()):
    """Assigning cost of every (ground truth, prior) pair, shape ``(G, P)``.

    Also returns the decoded prior lanes and ground-truth lanes.
    """
    lanes = [decode_prior(p, grid) for p in priors]
    gt_items = [_gt_lane_and_params(g, grid) for g in gts]
    cls = np.array([classification_cost(p.score, cfg.focal) for p in priors])
    costs = np.empty((len(gts), len(priors)))
    for i, (gl, gp) in enumerate(gt_items):
        for j, (p, pl) in enumerate(zip(priors, lanes)):
            sim = similarity_cost(pl, (p.start_x, p.start_y, p.theta), gl, gp)
            costs[i, j] = cfg.w_sim * sim + cfg.w_cls * cls[j]
    return costs, lanes, [gl for gl, _ in gt_items]


def dynamic_k(ious, k_max):
    """Per-row ``clip(round(sum of top-k_max IoUs), 1, k_max)``; half rounds up."""
    ious = np.nan_to_num(np.atleast_2d(ious), nan=0.0)
    top = -np.sort(-ious, axis=1)[:, :k_max]
    return np.clip(np.floor(top.sum(axis=1) + 0.5), 1, k_max).astype(np.int64)


def assign(priors, gts, grid, cfg=AssignCostConfig()):
    """Assign each ground truth a dynamic number of priors by ascending cost."""
    if len(priors) == 0:
        raise DomainError("assign needs at least one prior")
    n_p = len(priors)
    if len(gts) == 0:
        return AssignmentResult([], np.full(n_p, -1), np.empty((0, n_p)), np.empty(0, int))

    costs, lanes, gt_lanes = cost_matrix(priors, gts, grid, cfg)
    if cfg.one_to_one:
        ks = np.ones(len(gts), dtype=np.int64)
    else:
        ious = liou_matrix(
            [l.xs_or_nan() for l in gt_lanes], [l.xs_or_nan() for l in lanes],
            e=cfg.radius_e, empty_value=0.0,
        )
        ks = dynamic_k(ious, cfg.k_max)

    n_g = len(gts)
    gt_idx, prior_idx = np.meshgrid(np.arange(n_g), np.arange(n_p), indexing="ij")
    order = np.lexsort((gt_idx.ravel(), prior_idx.ravel(), costs.ravel()))
    prior_to_gt = np.full(n_p, -1, dtype=np.int64)
    taken = np.zeros(n_g, dtype=np.int64)
    matches = [[] for _ in range(n_g)]
    for flat in order:
        g, j = divmod(int(flat), n_p)
        if prior_to_gt[j] >= 0 or taken[g] >= ks[g]:
            continue
        prior_to_gt[j] = g
        taken[g] += 1
        matches[g].append((j, float(costs[g, j])))
        if np.all(taken >= np.minimum(ks, n_p)):
            break
    return AssignmentResult(matches, prior_to_gt, costs, ks)
