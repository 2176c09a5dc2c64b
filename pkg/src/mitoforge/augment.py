"""Training-time augmentations with correct box co-transformation.

All operations take and return (patch, boxes) where patch is uint8 RGB and
boxes are BBox instances in patch-local pixel coordinates. Randomized ops
take an explicit ``random.Random`` so callers own reproducibility.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from .geometry import BBox, clip_to_region, iou

CROP_MAX_TRIALS = 50
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class AugmentConfig:
    flip_probability: float = 0.5
    scale_base: int = 512
    scale_step: int = 64
    scale_count: int = 4
    crop_size: int = 512
    crop_min_iou: float = 0.3
    brightness: float = 0.125
    contrast: float = 0.25
    saturation: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.flip_probability <= 1.0):
            raise ValueError(f"flip_probability outside [0,1]: {self.flip_probability}")
        if not (0.0 <= self.crop_min_iou <= 1.0):
            raise ValueError(f"crop_min_iou outside [0,1]: {self.crop_min_iou}")
        for name in ("brightness", "contrast", "saturation"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} jitter range outside [0,1]: {v}")

    def scales(self) -> List[int]:
        return scale_set(self.scale_base, self.scale_step, self.scale_count)


def scale_set(base: int = 512, step: int = 64, count: int = 4) -> List[int]:
    """The multi-scale training set: base plus count/2 steps each way."""
    if count % 2 != 0 or count < 0:
        raise ValueError(f"count must be even and nonnegative, got {count}")
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    half = count // 2
    sizes = [base + k * step for k in range(-half, half + 1)]
    if sizes[0] <= 0:
        raise ValueError(f"scale set hits non-positive size: {sizes[0]}")
    return sizes


def flip(
    patch: np.ndarray, boxes: Sequence[BBox], axis: str
) -> Tuple[np.ndarray, List[BBox]]:
    """Mirror pixels and boxes about the given axis ("horizontal"/"vertical")."""
    h, w = patch.shape[:2]
    if axis == "horizontal":
        out = patch[:, ::-1].copy()
        flipped = [BBox(w - b.x_max, b.y_min, w - b.x_min, b.y_max) for b in boxes]
    elif axis == "vertical":
        out = patch[::-1].copy()
        flipped = [BBox(b.x_min, h - b.y_max, b.x_max, h - b.y_min) for b in boxes]
    else:
        raise ValueError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")
    return out, flipped


def rescale(
    patch: np.ndarray, boxes: Sequence[BBox], target: int
) -> Tuple[np.ndarray, List[BBox]]:
    """Bilinear resample to target x target; boxes scale linearly per axis."""
    if target <= 0:
        raise ValueError(f"target must be positive, got {target}")
    h, w = patch.shape[:2]
    if (h, w) == (target, target):
        out = patch.copy()
    else:
        out = np.asarray(
            Image.fromarray(patch).resize((target, target), Image.BILINEAR)
        )
    sx, sy = target / w, target / h
    scaled = [BBox(b.x_min * sx, b.y_min * sy, b.x_max * sx, b.y_max * sy) for b in boxes]
    return out, scaled


def min_iou_random_crop(
    patch: np.ndarray,
    boxes: Sequence[BBox],
    crop_size: int,
    min_iou: float,
    rng: random.Random,
    max_trials: int = CROP_MAX_TRIALS,
) -> Tuple[np.ndarray, List[BBox]]:
    """Random crop that keeps every surviving box mostly visible.

    A box survives a crop iff IoU(original, crop-clipped) >= min_iou. Crop
    origins are sampled uniformly; the first crop with at least one survivor
    is accepted. After ``max_trials`` failures the input is returned as is.
    """
    out, kept = min_iou_random_crop_indexed(patch, boxes, crop_size, min_iou, rng, max_trials)
    return out, [b for _, b in kept]


def min_iou_random_crop_indexed(
    patch: np.ndarray,
    boxes: Sequence[BBox],
    crop_size: int,
    min_iou: float,
    rng: random.Random,
    max_trials: int = CROP_MAX_TRIALS,
) -> Tuple[np.ndarray, List[Tuple[int, BBox]]]:
    """Like min_iou_random_crop but pairs each output box with its input index."""
    h, w = patch.shape[:2]
    if crop_size > w or crop_size > h:
        raise ValueError(f"crop {crop_size} exceeds patch {w}x{h}")
    if not (0.0 <= min_iou <= 1.0):
        raise ValueError(f"min_iou outside [0,1]: {min_iou}")
    for _ in range(max_trials):
        ox = rng.randint(0, w - crop_size)
        oy = rng.randint(0, h - crop_size)
        window = BBox(ox, oy, ox + crop_size, oy + crop_size)
        kept: List[Tuple[int, BBox]] = []
        for i, b in enumerate(boxes):
            clipped = clip_to_region(b, window)
            if clipped is not None and iou(b, clipped) >= min_iou:
                kept.append((i, clipped.translate(-ox, -oy)))
        if kept:
            cropped = patch[oy : oy + crop_size, ox : ox + crop_size].copy()
            return cropped, kept
    return patch.copy(), list(enumerate(boxes))


def color_contrast_jitter(
    patch: np.ndarray, config: AugmentConfig, rng: random.Random
) -> np.ndarray:
    """Brightness, contrast and luma-preserving saturation jitter.

    brightness: I + delta*255; contrast: mean + (1+gamma)*(I - mean);
    saturation: luma + (1+s)*(I - luma). Deltas drawn uniformly from the
    configured symmetric ranges. Boxes are unaffected.
    """
    delta = rng.uniform(-config.brightness, config.brightness)
    gamma = rng.uniform(-config.contrast, config.contrast)
    sat = rng.uniform(-config.saturation, config.saturation)

    img = patch.astype(np.float64)
    img = img + delta * 255.0
    mean = img.mean()
    img = mean + (1.0 + gamma) * (img - mean)
    luma = img @ _LUMA_WEIGHTS
    img = luma[..., None] + (1.0 + sat) * (img - luma[..., None])
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def augment_patch(
    patch: np.ndarray, boxes: Sequence[BBox], config: AugmentConfig, rng: random.Random
) -> Tuple[np.ndarray, List[BBox]]:
    """The full pipeline: random flips, scale pick, min-IoU crop, jitter."""
    out, kept = augment_patch_indexed(patch, boxes, config, rng)
    return out, [b for _, b in kept]


def augment_patch_indexed(
    patch: np.ndarray, boxes: Sequence[BBox], config: AugmentConfig, rng: random.Random
) -> Tuple[np.ndarray, List[Tuple[int, BBox]]]:
    """augment_patch variant pairing surviving boxes with their input indices."""
    out, bs = patch, list(boxes)
    if rng.random() < config.flip_probability:
        out, bs = flip(out, bs, "horizontal")
    if rng.random() < config.flip_probability:
        out, bs = flip(out, bs, "vertical")
    target = rng.choice(config.scales())
    out, bs = rescale(out, bs, target)
    crop = min(config.crop_size, target)
    out, kept = min_iou_random_crop_indexed(out, bs, crop, config.crop_min_iou, rng)
    out = color_contrast_jitter(out, config, rng)
    return out, kept
