"""Pipeline configuration: named defaults plus TOML/JSON file loading.

Every published training constant appears here as a documented default so
the zero-config pipeline reproduces the reference setup: 512-pixel tiles,
0.5 NMS, 0.3 crop IoU, warmup ratio 0.001 over 500 steps at base lr 0.01.
Validation errors carry the dotted path of the offending field.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .augment import AugmentConfig
from .cascade import CascadeStageConfig, Sampler
from .errors import ConfigError
from .evaluate import MatchCriterion


@dataclass
class StainSection:
    beta: float = 0.15
    alpha: float = 1.0
    reference_basis_path: str = ""


@dataclass
class TilingSection:
    tile_size: int = 512
    stride: int = 512
    min_visible_iou: float = 0.3


@dataclass
class CascadeSection:
    stage_thresholds: list = field(default_factory=lambda: [0.5, 0.6, 0.7])
    sampler: str = "random"
    samples_per_image: int = 512
    positive_fraction: float = 0.25
    refine_blend: float = 0.0

    def stages(self) -> list:
        return [
            CascadeStageConfig(
                iou_pos_threshold=t,
                samples_per_image=self.samples_per_image,
                positive_fraction=self.positive_fraction,
                sampler=Sampler(self.sampler),
            )
            for t in self.stage_thresholds
        ]


@dataclass
class ScheduleSection:
    base_lr: float = 0.01
    warmup_ratio: float = 0.001
    warmup_steps: int = 500
    grad_clip_norm: float = 35.0


@dataclass
class EvalSection:
    criterion: str = "iou"
    iou_tau: float = 0.5
    distance: float = 0.0
    averaging: str = "micro"
    nms_threshold: float = 0.5
    score_threshold: float = 0.0

    def match_criterion(self) -> MatchCriterion:
        return MatchCriterion(
            kind=self.criterion, iou_tau=self.iou_tau, max_distance=self.distance
        )


@dataclass
class PipelineConfig:
    io: float = 255.0
    seed: int = 0
    stain: StainSection = field(default_factory=StainSection)
    tiling: TilingSection = field(default_factory=TilingSection)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    cascade: CascadeSection = field(default_factory=CascadeSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> None:
        checks = [
            ("io", self.io > 0, "must be positive"),
            ("stain.beta", self.stain.beta >= 0, "must be >= 0"),
            ("stain.alpha", 0 < self.stain.alpha < 50, "must be in (0, 50)"),
            ("tiling.tile_size", self.tiling.tile_size > 0, "must be positive"),
            (
                "tiling.stride",
                0 < self.tiling.stride <= self.tiling.tile_size,
                "must be in (0, tile_size]",
            ),
            (
                "tiling.min_visible_iou",
                0 <= self.tiling.min_visible_iou <= 1,
                "must be in [0,1]",
            ),
            (
                "cascade.stage_thresholds",
                all(
                    b > a
                    for a, b in zip(
                        self.cascade.stage_thresholds, self.cascade.stage_thresholds[1:]
                    )
                )
                and all(0 <= t <= 1 for t in self.cascade.stage_thresholds),
                "must be strictly increasing within [0,1]",
            ),
            (
                "cascade.sampler",
                self.cascade.sampler in [s.value for s in Sampler],
                f"must be one of {[s.value for s in Sampler]}",
            ),
            (
                "cascade.refine_blend",
                0 <= self.cascade.refine_blend <= 1,
                "must be in [0,1]",
            ),
            ("schedule.base_lr", self.schedule.base_lr > 0, "must be positive"),
            (
                "schedule.warmup_ratio",
                0 < self.schedule.warmup_ratio <= 1,
                "must be in (0,1]",
            ),
            ("schedule.warmup_steps", self.schedule.warmup_steps >= 1, "must be >= 1"),
            (
                "eval.criterion",
                self.eval.criterion in ("iou", "center_distance"),
                "must be 'iou' or 'center_distance'",
            ),
            ("eval.iou_tau", 0 <= self.eval.iou_tau <= 1, "must be in [0,1]"),
            ("eval.distance", self.eval.distance >= 0, "must be >= 0"),
            (
                "eval.averaging",
                self.eval.averaging in ("micro", "macro"),
                "must be 'micro' or 'macro'",
            ),
            (
                "eval.nms_threshold",
                0 <= self.eval.nms_threshold <= 1,
                "must be in [0,1]",
            ),
        ]
        for path, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{path}: {msg}")

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "stain": StainSection,
    "tiling": TilingSection,
    "augment": AugmentConfig,
    "cascade": CascadeSection,
    "schedule": ScheduleSection,
    "eval": EvalSection,
}


def load_config(path: str | Path | None) -> PipelineConfig:
    """Build a PipelineConfig from a TOML or JSON file (or pure defaults)."""
    cfg = PipelineConfig()
    if path is None:
        cfg.validate()
        return cfg
    path = Path(path)
    try:
        if path.suffix == ".json":
            data = json.loads(path.read_text())
        else:
            with open(path, "rb") as f:
                data = tomllib.load(f)
    except (OSError, ValueError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected a table/object")
            section = getattr(cfg, key)
            for k, v in value.items():
                if not hasattr(section, k):
                    raise ConfigError(f"{key}.{k}: unknown field")
                try:
                    setattr(section, k, v)
                except ValueError as e:
                    raise ConfigError(f"{key}.{k}: {e}") from e
        elif key in ("io", "seed"):
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"{key}: unknown field")
    # AugmentConfig validates in __post_init__; re-run it after field updates.
    try:
        cfg.augment.__post_init__()
    except ValueError as e:
        raise ConfigError(f"augment: {e}") from e
    cfg.validate()
    return cfg
