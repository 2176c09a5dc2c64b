"""Non-neural simulation of cascade-detector training mechanics.

Models per-stage proposal assignment under increasing IoU thresholds, the
progressive resampling step, the alternative hard-example samplers, and the
numeric training primitives (focal loss, linear warmup, gradient clipping).
The learned per-stage box regressor is stood in for by a convex blend of
each positive proposal toward its matched ground truth.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyAssignment, MissingLosses
from .geometry import BBox, iou
from .tiler import Annotation

DEFAULT_STAGE_THRESHOLDS = (0.5, 0.6, 0.7)
DEFAULT_SAMPLES_PER_IMAGE = 512
DEFAULT_POSITIVE_FRACTION = 0.25
DEFAULT_GRAD_CLIP_NORM = 35.0


class Sampler(str, Enum):
    RANDOM = "random"
    OHEM = "ohem"
    IOU_BALANCED = "iou_balanced"


class Status(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORE = "ignore"


@dataclass(frozen=True)
class CascadeStageConfig:
    iou_pos_threshold: float
    iou_neg_threshold: Optional[float] = None  # defaults to pos threshold (no ignore band)
    samples_per_image: int = DEFAULT_SAMPLES_PER_IMAGE
    positive_fraction: float = DEFAULT_POSITIVE_FRACTION
    sampler: Sampler = Sampler.RANDOM

    def __post_init__(self):
        neg = self.iou_neg_threshold
        if neg is None:
            object.__setattr__(self, "iou_neg_threshold", self.iou_pos_threshold)
            neg = self.iou_pos_threshold
        if not (0.0 <= neg <= self.iou_pos_threshold <= 1.0):
            raise ValueError(
                f"need 0 <= neg ({neg}) <= pos ({self.iou_pos_threshold}) <= 1"
            )
        if self.samples_per_image <= 0:
            raise ValueError("samples_per_image must be positive")
        if not (0.0 <= self.positive_fraction <= 1.0):
            raise ValueError(f"positive_fraction outside [0,1]: {self.positive_fraction}")


@dataclass(frozen=True)
class ProposalAssignment:
    status: Status
    max_iou: float
    gt_index: Optional[int] = None  # set iff status is POSITIVE


AssignmentResult = List[ProposalAssignment]


@dataclass
class StageStats:
    positives: int
    negatives: int
    sampled_positives: int
    mean_pos_iou: float


@dataclass
class CascadeReport:
    stages: List[StageStats] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "stages": [
                    {
                        "positives": s.positives,
                        "negatives": s.negatives,
                        "sampled_positives": s.sampled_positives,
                        "mean_pos_iou": s.mean_pos_iou,
                    }
                    for s in self.stages
                ]
            }
        )


def assign_proposals(
    proposals: Sequence[BBox],
    gts: Sequence[Annotation],
    cfg: CascadeStageConfig,
) -> AssignmentResult:
    """Label each proposal positive/negative/ignore by its best-IoU ground truth.

    Ties on the argmax ground truth break toward the lowest index. With no
    ground truths every proposal is negative.
    """
    result: AssignmentResult = []
    for prop in proposals:
        best_iou, best_gt = 0.0, None
        for gi, gt in enumerate(gts):
            v = iou(prop, gt.box)
            if v > best_iou:
                best_iou, best_gt = v, gi
        if best_gt is not None and best_iou >= cfg.iou_pos_threshold:
            result.append(ProposalAssignment(Status.POSITIVE, best_iou, best_gt))
        elif best_iou < cfg.iou_neg_threshold:
            result.append(ProposalAssignment(Status.NEGATIVE, best_iou))
        else:
            result.append(ProposalAssignment(Status.IGNORE, best_iou))
    return result


def _split_indices(assignment: AssignmentResult) -> Tuple[List[int], List[int]]:
    pos = [i for i, a in enumerate(assignment) if a.status is Status.POSITIVE]
    neg = [i for i, a in enumerate(assignment) if a.status is Status.NEGATIVE]
    return pos, neg


def _quotas(cfg: CascadeStageConfig, n_pos: int) -> Tuple[int, int]:
    pos_quota = min(int(cfg.positive_fraction * cfg.samples_per_image), n_pos)
    neg_quota = cfg.samples_per_image - pos_quota
    return pos_quota, neg_quota


def sample_random(
    assignment: AssignmentResult, cfg: CascadeStageConfig, rng: random.Random
) -> List[int]:
    """Uniform sampling without replacement honoring the positive fraction."""
    pos, neg = _split_indices(assignment)
    if not pos and not neg:
        raise EmptyAssignment("no positives or negatives to sample")
    pos_quota, neg_quota = _quotas(cfg, len(pos))
    chosen = rng.sample(pos, pos_quota) if pos else []
    chosen += rng.sample(neg, min(neg_quota, len(neg))) if neg else []
    return chosen


def sample_ohem(
    assignment: AssignmentResult,
    per_proposal_losses: Sequence[float],
    cfg: CascadeStageConfig,
) -> List[int]:
    """Hardest-first sampling: highest loss within each status class.

    Deterministic; equal losses fall back to input order (stable sort).
    """
    if per_proposal_losses is None or len(per_proposal_losses) != len(assignment):
        raise MissingLosses(
            f"need one loss per proposal ({len(assignment)}), "
            f"got {0 if per_proposal_losses is None else len(per_proposal_losses)}"
        )
    pos, neg = _split_indices(assignment)
    if not pos and not neg:
        raise EmptyAssignment("no positives or negatives to sample")
    pos_quota, neg_quota = _quotas(cfg, len(pos))

    def hardest(indices: List[int], quota: int) -> List[int]:
        ranked = sorted(indices, key=lambda i: -per_proposal_losses[i])
        return ranked[:quota]

    return hardest(pos, pos_quota) + hardest(neg, min(neg_quota, len(neg)))


def sample_iou_balanced(
    assignment: AssignmentResult,
    cfg: CascadeStageConfig,
    bins: int,
    rng: random.Random,
) -> List[int]:
    """Negatives drawn evenly across IoU bins over [0, iou_neg_threshold).

    Quota left over from empty bins is redistributed to the populated ones.
    Positives are sampled uniformly as in sample_random.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    pos, neg = _split_indices(assignment)
    if not pos and not neg:
        raise EmptyAssignment("no positives or negatives to sample")
    pos_quota, neg_quota = _quotas(cfg, len(pos))
    chosen = rng.sample(pos, pos_quota) if pos else []

    hi = cfg.iou_neg_threshold
    width = hi / bins if hi > 0 else 0.0
    binned: List[List[int]] = [[] for _ in range(bins)]
    for i in neg:
        b = 0 if width == 0 else min(int(assignment[i].max_iou / width), bins - 1)
        binned[b].append(i)

    remaining = min(neg_quota, len(neg))
    picked_neg: List[int] = []
    active = [b for b in binned if b]
    while remaining > 0 and active:
        share = max(remaining // len(active), 1)
        next_active = []
        for b in active:
            take = min(share, len(b), remaining)
            if take > 0:
                picks = rng.sample(b, take)
                picked_neg += picks
                for p in picks:
                    b.remove(p)
                remaining -= take
            if b:
                next_active.append(b)
        active = next_active
    return chosen + picked_neg


def run_cascade(
    proposals: Sequence[BBox],
    gts: Sequence[Annotation],
    stages: Sequence[CascadeStageConfig],
    refine_blend: float,
    rng: random.Random,
    per_proposal_losses: Optional[Sequence[float]] = None,
    on_stage=None,
) -> CascadeReport:
    """Assign, sample and refine proposals through successive stages.

    Stage thresholds must be strictly increasing. After each stage every
    positive proposal is blended cornerwise toward its matched ground truth
    by ``refine_blend`` (0 keeps proposals fixed, 1 snaps them onto the gt).
    ``on_stage(stage_index, boxes, assignment)`` is called per stage with the
    proposal boxes as seen by that stage, for inspection.
    """
    if not (0.0 <= refine_blend <= 1.0):
        raise ValueError(f"refine_blend outside [0,1]: {refine_blend}")
    thresholds = [s.iou_pos_threshold for s in stages]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError(f"stage thresholds must strictly increase, got {thresholds}")

    boxes = list(proposals)
    report = CascadeReport()
    for stage_index, cfg in enumerate(stages):
        assignment = assign_proposals(boxes, gts, cfg)
        if on_stage is not None:
            on_stage(stage_index, list(boxes), assignment)
        pos, neg = _split_indices(assignment)
        if pos or neg:
            if cfg.sampler is Sampler.OHEM:
                sampled = sample_ohem(assignment, per_proposal_losses, cfg)
            elif cfg.sampler is Sampler.IOU_BALANCED:
                sampled = sample_iou_balanced(assignment, cfg, bins=3, rng=rng)
            else:
                sampled = sample_random(assignment, cfg, rng)
        else:
            sampled = []
        sampled_pos = sum(1 for i in sampled if assignment[i].status is Status.POSITIVE)
        mean_iou = (
            sum(assignment[i].max_iou for i in pos) / len(pos) if pos else 0.0
        )
        report.stages.append(
            StageStats(
                positives=len(pos),
                negatives=len(neg),
                sampled_positives=sampled_pos,
                mean_pos_iou=mean_iou,
            )
        )
        if refine_blend > 0.0:
            for i in pos:
                gt_box = gts[assignment[i].gt_index].box
                b = boxes[i]
                boxes[i] = BBox(
                    (1 - refine_blend) * b.x_min + refine_blend * gt_box.x_min,
                    (1 - refine_blend) * b.y_min + refine_blend * gt_box.y_min,
                    (1 - refine_blend) * b.x_max + refine_blend * gt_box.x_max,
                    (1 - refine_blend) * b.y_max + refine_blend * gt_box.y_max,
                )
    return report


def focal_loss(p: float, gamma: float, alpha_weight: float = 1.0) -> Tuple[float, float]:
    """Focal loss and its analytic derivative in the true-class probability.

    loss = -alpha * (1-p)^gamma * ln(p), for p in (0, 1].
    """
    if not (0.0 < p <= 1.0):
        raise ValueError(f"p must be in (0,1], got {p}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if alpha_weight <= 0:
        raise ValueError(f"alpha_weight must be positive, got {alpha_weight}")
    q = 1.0 - p
    loss = -alpha_weight * q**gamma * math.log(p)
    # ln(1) = 0 kills the first term at p = 1, avoiding 0**(gamma-1) blowups.
    term1 = 0.0 if (gamma == 0.0 or p == 1.0) else alpha_weight * gamma * q ** (gamma - 1.0) * math.log(p)
    term2 = -alpha_weight * q**gamma / p
    return loss, term1 + term2


def warmup_lr(step: int, base_lr: float, warmup_ratio: float, warmup_steps: int) -> float:
    """Linear warmup: ramps from base_lr*ratio at step 0 up to base_lr."""
    if base_lr <= 0:
        raise ValueError(f"base_lr must be positive, got {base_lr}")
    if not (0.0 < warmup_ratio <= 1.0):
        raise ValueError(f"warmup_ratio must be in (0,1], got {warmup_ratio}")
    if warmup_steps < 1:
        raise ValueError(f"warmup_steps must be >= 1, got {warmup_steps}")
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step >= warmup_steps:
        return base_lr
    return base_lr * (warmup_ratio + (1.0 - warmup_ratio) * step / warmup_steps)


def clip_gradient_norm(gradient: np.ndarray, max_norm: float = DEFAULT_GRAD_CLIP_NORM) -> np.ndarray:
    """Scale a gradient vector down so its L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    g = np.asarray(gradient, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient contains non-finite entries")
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g.copy()
