"""Walkthrough: tiling an annotated field into 512x512 patches and splitting.

Shows grid construction with edge anchoring, annotation reprojection with
the 0.3 visibility rule, non-empty filtering, and a seeded random split.
"""
from mitoforge.geometry import BBox
from mitoforge.tiler import (
    Annotation,
    Label,
    build_tile_grid,
    filter_nonempty,
    project_annotations,
    split_random,
)

grid = build_tile_grid((2048, 1536), tile_size=512, stride=512)
print(f"2048x1536 field -> {len(grid.origins)} tiles:", grid.origins[:4], "...")

# A non-multiple size gets an extra edge-anchored row/column, never padding.
ragged = build_tile_grid((1000, 700), tile_size=512)
print("1000x700 field origins:", ragged.origins)

annotations = [
    Annotation(BBox(100, 100, 140, 140), Label.MITOSIS, "hpf_0"),
    Annotation(BBox(500, 500, 530, 530), Label.MITOSIS, "hpf_0"),   # straddles 4 tiles
    Annotation(BBox(1300, 800, 1340, 840), Label.HARD_NEGATIVE, "hpf_0"),
]
records = project_annotations(annotations, grid, min_visible_iou=0.3)
kept = filter_nonempty(records)
print(f"\n{len(records)} tiles, {len(kept)} with annotations after filtering:")
for rec in kept:
    labels = [a.label.value for a in rec.annotations]
    print(f"  tile {rec.origin}: {labels}")

split = split_random(kept, seed=7, train_fraction=0.5)
print(f"\nseeded split: {len(split.train)} train / {len(split.val)} val (seed {split.seed})")
again = split_random(kept, seed=7, train_fraction=0.5)
print("same seed, same split:", split.train == again.train and split.val == again.val)
