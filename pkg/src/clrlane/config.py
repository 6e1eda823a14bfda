"""Flat run configuration: built-in defaults < config file < CLI flags."""

from dataclasses import asdict, dataclass, fields, replace
import json
from pathlib import Path

import yaml

from .assignment import AssignCostConfig
from .errors import ConfigError
from .geometry import LaneGrid
from .liou import LiouConfig
from .losses import FocalParams, LossWeights
from .metrics import DEFAULT_THRESHOLDS, EvalConfig


@dataclass(frozen=True)
class Config:
    n_points: int = 72
    image_height: float = 590.0
    image_width: float = 1640.0
    n_samples: int = 36
    pooled_height: int = 10
    pooled_width: int = 25
    channels: int = 64
    num_refinements: int = 3
    radius_e: float = 15.0
    union_rows: bool = False
    w_sim: float = 3.0
    w_cls_assign: float = 1.0
    k_max: int = 4
    one_to_one: bool = False
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1.0
    loss_w_cls: float = 1.0
    loss_w_xytl: float = 1.0
    loss_w_liou: float = 2.0
    score_thresh: float = 0.4
    nms_iou_thresh: float = 0.5
    eval_thresholds: tuple = DEFAULT_THRESHOLDS
    iou_mode: str = "mask"
    line_width: float = 30.0
    inclusive: bool = False
    tusimple_pixel_tol: float = 20.0
    tusimple_point_frac: float = 0.85

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type is bool and not isinstance(value, bool):
                raise ConfigError(f"{f.name} must be true or false, got {value!r}")
            if f.type in (int, float) and (
                isinstance(value, bool) or not isinstance(value, (int, float))
            ):
                raise ConfigError(f"{f.name} must be a number, got {value!r}")
            if f.type is int and int(value) != value:
                raise ConfigError(f"{f.name} must be an integer, got {value!r}")
        if not isinstance(self.eval_thresholds, (list, tuple)):
            raise ConfigError("eval_thresholds must be a list")
        object.__setattr__(self, "eval_thresholds", tuple(self.eval_thresholds))
        if self.n_samples < 1 or self.channels < 1 or self.num_refinements < 1:
            raise ConfigError("n_samples, channels and num_refinements must be positive")
        if not 0.0 <= self.score_thresh <= 1.0:
            raise ConfigError("score_thresh must lie in [0, 1]")
        if not -1.0 <= self.nms_iou_thresh <= 1.0:
            raise ConfigError("nms_iou_thresh must lie in [-1, 1]")
        # delegate the rest to the owning modules
        try:
            self.grid()
            self.liou()
            self.assign()
            self.loss_weights()
            self.eval()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def grid(self):
        return LaneGrid(self.n_points, self.image_height, self.image_width)

    def liou(self):
        return LiouConfig(self.radius_e, self.union_rows)

    def focal(self):
        return FocalParams(self.focal_alpha, self.focal_gamma)

    def assign(self):
        return AssignCostConfig(
            self.w_sim, self.w_cls_assign, self.k_max, self.one_to_one,
            self.focal(), self.radius_e,
        )

    def loss_weights(self):
        return LossWeights(self.loss_w_cls, self.loss_w_xytl, self.loss_w_liou)

    def eval(self):
        return EvalConfig(
            self.iou_mode, self.line_width, self.eval_thresholds, self.inclusive,
            self.tusimple_pixel_tol, self.tusimple_point_frac,
        )

    def to_dict(self):
        d = asdict(self)
        d["eval_thresholds"] = list(d["eval_thresholds"])
        return d

    def merged(self, overrides):
        """Copy with non-``None`` ``overrides`` applied; unknown keys are rejected."""
        overrides = {k: v for k, v in overrides.items() if v is not None}
        _check_keys(overrides)
        try:
            return replace(self, **overrides)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


_KEYS = {f.name for f in fields(Config)}


def _check_keys(mapping):
    unknown = sorted(set(mapping) - _KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def load_config(path=None, overrides=None):
    """Defaults, then the YAML/JSON file at ``path``, then ``overrides``."""
    cfg = Config()
    if path is not None:
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        cfg = cfg.merged(data)
    if overrides:
        cfg = cfg.merged(overrides)
    return cfg


def dump_config(cfg):
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
