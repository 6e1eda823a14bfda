"""Lane-detection geometry, Line IoU, assignment, head math and evaluation."""

__version__ = "0.1.0"

from .assignment import AssignCostConfig, AssignmentResult, assign, classification_cost, similarity_cost
from .errors import ConfigError, DimensionError, DomainError, FormatError, LaneError, ParseError
from .geometry import Lane, LaneGrid, LanePrior, decode_prior, mask_iou, rasterize, resample_polyline
from .head import (
    FeatureMap, RefinementConfig, RoiFeature, inference_filter, lane_nms, refine,
    refine_cascade, roi_gather, sample_roi, uniform_priors,
)
from .liou import LiouConfig, LiouResult, liou, liou_loss, segment_iou
from .losses import FocalParams, LossWeights, focal_loss, smooth_l1, total_loss
from .metrics import (
    EvalConfig, EvalReport, category_report, f1_curve, match_lanes, tusimple_eval,
)
