"""Walkthrough: scoring detections, PR curves, AP and tile stitching.

A toy scene with one missed mitosis and one false positive, then a stitch
of overlapping tiles where duplicate detections collapse under NMS.
"""
import tempfile
from pathlib import Path

from mitoforge.evaluate import (
    Detection,
    average_precision,
    evaluate,
    export_pr,
    match_detections,
    pr_curve,
    precision_recall_f1,
    stitch_detections,
)
from mitoforge.geometry import BBox
from mitoforge.tiler import Annotation, Label

gts = [
    Annotation(BBox(10, 10, 40, 40), Label.MITOSIS, "img"),
    Annotation(BBox(100, 100, 130, 130), Label.MITOSIS, "img"),
    Annotation(BBox(200, 200, 230, 230), Label.HARD_NEGATIVE, "img"),
]
dets = [
    Detection(BBox(12, 11, 41, 40), Label.MITOSIS, 0.95, "img"),   # TP
    Detection(BBox(300, 300, 330, 330), Label.MITOSIS, 0.80, "img"),  # FP
    Detection(BBox(201, 199, 229, 231), Label.HARD_NEGATIVE, 0.70, "img"),  # TP
]

m = match_detections(dets, gts)
p, r, f1 = precision_recall_f1(m)
print(f"TP={m.tp} FP={m.fp} FN={m.fn} -> P={p:.3f} R={r:.3f} F1={f1:.3f}")

curves = pr_curve(dets, gts)
for label, curve in curves.items():
    print(f"{label.value}: AP = {average_precision(curve):.4f}, points = {curve.points}")

report = evaluate(dets, gts)
print("\nfull report:", report)

with tempfile.TemporaryDirectory() as d:
    csv = Path(d) / "pr.csv"
    export_pr(curves, str(csv))
    print("\nPR CSV:")
    print(csv.read_text())

# Overlapping tiles both see the mitosis at global (100,100): one survives.
tile_a = [Detection(BBox(100, 100, 130, 130), Label.MITOSIS, 0.9, "img")]
tile_b = [Detection(BBox(36, 100, 66, 130), Label.MITOSIS, 0.8, "img")]
stitched = stitch_detections([((0, 0), tile_a), ((64, 0), tile_b)])
print(f"stitched {len(tile_a) + len(tile_b)} tile detections -> {len(stitched)} global "
      f"(score {stitched[0].score})")
