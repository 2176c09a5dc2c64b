"""Tiling of annotated fields into fixed-size patches and seeded splitting.

Tiles are anchored on a stride grid; when the last regular tile stops short
of an image edge, one extra tile is anchored flush with that edge so every
pixel is covered and every patch keeps its full size.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

from .errors import ImageTooSmall, InsufficientRecords
from .geometry import BBox, clip_to_region, iou

DEFAULT_TILE_SIZE = 512
DEFAULT_MIN_VISIBLE_IOU = 0.3


class Label(str, Enum):
    MITOSIS = "mitosis"
    HARD_NEGATIVE = "hard_negative"


@dataclass(frozen=True)
class Annotation:
    box: BBox
    label: Label
    image_id: str = ""


@dataclass(frozen=True)
class TileGrid:
    tile_size: int
    stride: int
    origins: Tuple[Tuple[int, int], ...]
    image_size: Tuple[int, int]  # (W, H)


@dataclass
class PatchRecord:
    image_id: str
    origin: Tuple[int, int]
    annotations: List[Annotation] = field(default_factory=list)


@dataclass
class DatasetSplit:
    train: List[PatchRecord]
    val: List[PatchRecord]
    seed: int


def _axis_anchors(extent: int, tile_size: int, stride: int) -> List[int]:
    anchors = list(range(0, extent - tile_size + 1, stride))
    if anchors[-1] + tile_size < extent:
        anchors.append(extent - tile_size)
    return anchors


def build_tile_grid(
    image_size: Tuple[int, int],
    tile_size: int = DEFAULT_TILE_SIZE,
    stride: Optional[int] = None,
) -> TileGrid:
    """Tile anchors covering an image of size (W, H)."""
    w, h = image_size
    if stride is None:
        stride = tile_size
    if tile_size > w or tile_size > h:
        raise ImageTooSmall(f"tile {tile_size} exceeds image {w}x{h}")
    if not (0 < stride <= tile_size):
        raise ValueError(f"stride must be in (0, tile_size], got {stride}")
    xs = _axis_anchors(w, tile_size, stride)
    ys = _axis_anchors(h, tile_size, stride)
    origins = tuple((x, y) for y in ys for x in xs)
    return TileGrid(tile_size=tile_size, stride=stride, origins=origins, image_size=(w, h))


def project_annotations(
    annotations: Sequence[Annotation],
    grid: TileGrid,
    min_visible_iou: float = DEFAULT_MIN_VISIBLE_IOU,
) -> List[PatchRecord]:
    """Clip annotations into each tile, keeping those still mostly visible.

    An annotation is retained in a tile iff the IoU between the original box
    and its tile-clipped version is at least ``min_visible_iou``; retained
    boxes are translated into tile-local coordinates.
    """
    records: List[PatchRecord] = []
    ts = grid.tile_size
    for ox, oy in grid.origins:
        tile = BBox(ox, oy, ox + ts, oy + ts)
        local: List[Annotation] = []
        for ann in annotations:
            clipped = clip_to_region(ann.box, tile)
            if clipped is None:
                continue
            if iou(ann.box, clipped) < min_visible_iou:
                continue
            local.append(
                Annotation(box=clipped.translate(-ox, -oy), label=ann.label, image_id=ann.image_id)
            )
        image_id = annotations[0].image_id if annotations else ""
        records.append(PatchRecord(image_id=image_id, origin=(ox, oy), annotations=local))
    return records


def filter_nonempty(records: Iterable[PatchRecord]) -> List[PatchRecord]:
    """Keep patches holding at least one annotation of either class."""
    return [r for r in records if r.annotations]


def split_random(
    records: Sequence[PatchRecord],
    seed: int,
    train_count: Optional[int] = None,
    val_count: Optional[int] = None,
    train_fraction: Optional[float] = None,
) -> DatasetSplit:
    """Seeded shuffle then partition, by exact counts or by fraction.

    In count mode, records beyond train_count + val_count are discarded so
    exact published sizes can be reproduced.
    """
    shuffled = list(records)
    random.Random(seed).shuffle(shuffled)
    if train_count is not None and val_count is not None:
        if train_count + val_count > len(shuffled):
            raise InsufficientRecords(
                f"requested {train_count}+{val_count} records, only {len(shuffled)} available"
            )
        train = shuffled[:train_count]
        val = shuffled[train_count : train_count + val_count]
    elif train_fraction is not None:
        if not (0.0 <= train_fraction <= 1.0):
            raise ValueError(f"train_fraction outside [0,1]: {train_fraction}")
        cut = round(train_fraction * len(shuffled))
        train, val = shuffled[:cut], shuffled[cut:]
    else:
        raise ValueError("provide either train_count+val_count or train_fraction")
    return DatasetSplit(train=train, val=val, seed=seed)


# --- serialization ----------------------------------------------------------

def annotations_from_json(text: str) -> Tuple[str, Tuple[int, int], List[Annotation]]:
    """Parse the annotation file format.

    Schema: {"image_id", "width", "height",
             "annotations": [{"bbox": [x0,y0,x1,y1], "label": ...}]}
    """
    obj = json.loads(text)
    for key in ("image_id", "width", "height", "annotations"):
        if key not in obj:
            raise ValueError(f"annotation file missing key: {key!r}")
    image_id = obj["image_id"]
    anns: List[Annotation] = []
    for i, entry in enumerate(obj["annotations"]):
        try:
            label = Label(entry["label"])
        except ValueError:
            raise ValueError(
                f"annotations[{i}].label: unknown label {entry.get('label')!r}"
            ) from None
        x0, y0, x1, y1 = entry["bbox"]
        anns.append(Annotation(box=BBox(x0, y0, x1, y1), label=label, image_id=image_id))
    return image_id, (int(obj["width"]), int(obj["height"])), anns


def record_to_json(record: PatchRecord) -> str:
    return json.dumps(
        {
            "image_id": record.image_id,
            "origin": list(record.origin),
            "annotations": [
                {"bbox": list(a.box.as_tuple()), "label": a.label.value}
                for a in record.annotations
            ],
        }
    )


def record_from_json(line: str) -> PatchRecord:
    obj = json.loads(line)
    return PatchRecord(
        image_id=obj["image_id"],
        origin=tuple(obj["origin"]),
        annotations=[
            Annotation(
                box=BBox(*a["bbox"]), label=Label(a["label"]), image_id=obj["image_id"]
            )
            for a in obj["annotations"]
        ],
    )


def patch_filename(record: PatchRecord) -> str:
    ox, oy = record.origin
    return f"{record.image_id}_{ox}_{oy}.png"
