"""Scoring of detector outputs: stitching, matching, PR curves and AP.

Matching is greedy per class: detections are visited in descending score
order and each claims its best still-unmatched ground truth under the
chosen criterion (IoU or center distance). Precision/recall conventions
for empty denominators: no detections gives precision 1 and recall 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .geometry import BBox, ScoredBox, iou, nms
from .tiler import Annotation, Label

DEFAULT_MATCH_IOU = 0.5
DEFAULT_STITCH_NMS = 0.5


@dataclass(frozen=True)
class Detection:
    box: BBox
    label: Label
    score: float
    image_id: str = ""

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score outside [0,1]: {self.score}")


@dataclass(frozen=True)
class MatchCriterion:
    """Either IoU >= iou_tau, or center distance <= max_distance pixels."""

    kind: str = "iou"  # "iou" | "center_distance"
    iou_tau: float = DEFAULT_MATCH_IOU
    max_distance: float = 0.0

    def __post_init__(self):
        if self.kind == "iou":
            if not (0.0 <= self.iou_tau <= 1.0):
                raise ValueError(f"iou_tau outside [0,1]: {self.iou_tau}")
        elif self.kind == "center_distance":
            if self.max_distance < 0:
                raise ValueError(f"max_distance must be >= 0, got {self.max_distance}")
        else:
            raise ValueError(f"unknown criterion kind: {self.kind!r}")

    def affinity(self, det_box: BBox, gt_box: BBox) -> Optional[float]:
        """Match quality, higher is better; None when the pair is ineligible."""
        if self.kind == "iou":
            v = iou(det_box, gt_box)
            return v if v >= self.iou_tau else None
        dx = det_box.center[0] - gt_box.center[0]
        dy = det_box.center[1] - gt_box.center[1]
        dist = (dx * dx + dy * dy) ** 0.5
        return -dist if dist <= self.max_distance else None


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int]] = field(default_factory=list)  # (det idx, gt idx)
    unmatched_detections: List[int] = field(default_factory=list)
    unmatched_gts: List[int] = field(default_factory=list)
    criterion: MatchCriterion = MatchCriterion()

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_detections)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gts)


@dataclass
class PRCurve:
    label: Label
    points: List[Tuple[float, float, float]] = field(default_factory=list)  # (thr, recall, precision)


def stitch_detections(
    per_tile: Sequence[Tuple[Tuple[float, float], Sequence[Detection]]],
    nms_threshold: float = DEFAULT_STITCH_NMS,
) -> List[Detection]:
    """Translate tile-local detections to the global frame and dedup via NMS."""
    translated: List[Detection] = []
    for (ox, oy), dets in per_tile:
        for d in dets:
            translated.append(
                Detection(d.box.translate(ox, oy), d.label, d.score, d.image_id)
            )
    labels = list(Label)
    scored = [
        ScoredBox(d.box, d.score, class_id=labels.index(d.label)) for d in translated
    ]
    survivors = {id(s) for s in nms(scored, nms_threshold)}
    kept = [
        (s, d) for s, d in zip(scored, translated) if id(s) in survivors
    ]
    kept.sort(key=lambda pair: -pair[0].score)
    return [Detection(s.box, d.label, d.score, d.image_id) for s, d in kept]


def match_detections(
    detections: Sequence[Detection],
    gts: Sequence[Annotation],
    criterion: MatchCriterion = MatchCriterion(),
) -> MatchResult:
    """Greedy per-class matching; leftovers become FPs and FNs."""
    result = MatchResult(criterion=criterion)
    matched_gts: set = set()
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    for di in order:
        det = detections[di]
        best_gt, best_aff = None, None
        for gi, gt in enumerate(gts):
            if gi in matched_gts or gt.label != det.label:
                continue
            aff = criterion.affinity(det.box, gt.box)
            if aff is not None and (best_aff is None or aff > best_aff):
                best_gt, best_aff = gi, aff
        if best_gt is None:
            result.unmatched_detections.append(di)
        else:
            matched_gts.add(best_gt)
            result.pairs.append((di, best_gt))
    result.unmatched_gts = [gi for gi in range(len(gts)) if gi not in matched_gts]
    return result


def precision_recall_f1(match: MatchResult) -> Tuple[float, float, float]:
    """(precision, recall, F1) with documented empty-denominator conventions."""
    return _prf(match.tp, match.fp, match.fn)


def _prf(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def pr_curve(
    detections: Sequence[Detection],
    gts: Sequence[Annotation],
    criterion: MatchCriterion = MatchCriterion(),
) -> Dict[Label, PRCurve]:
    """One precision-recall curve per class, swept over every distinct score."""
    curves: Dict[Label, PRCurve] = {}
    for label in Label:
        class_dets = [d for d in detections if d.label == label]
        class_gts = [g for g in gts if g.label == label]
        if not class_dets and not class_gts:
            continue
        curve = PRCurve(label=label)
        thresholds = sorted({d.score for d in class_dets}, reverse=True)
        for thr in thresholds:
            subset = [d for d in class_dets if d.score >= thr]
            m = match_detections(subset, class_gts, criterion)
            p, r, _ = precision_recall_f1(m)
            curve.points.append((thr, r, p))
        curves[label] = curve
    return curves


def average_precision(curve: PRCurve) -> float:
    """All-point interpolated AP: sum of recall gains times the precision
    envelope (max precision at any recall at least as large)."""
    if not curve.points:
        return 0.0
    pts = sorted((r, p) for _, r, p in curve.points)
    ap = 0.0
    prev_recall = 0.0
    for i, (r, _) in enumerate(pts):
        if r <= prev_recall:
            continue
        envelope = max(p for rr, p in pts if rr >= r)
        ap += (r - prev_recall) * envelope
        prev_recall = r
    return ap


def best_f1(curve: PRCurve) -> float:
    """Best F1 over the curve's operating points."""
    best = 0.0
    for _, r, p in curve.points:
        if p + r > 0:
            best = max(best, 2 * p * r / (p + r))
    return best


# --- aggregation and serialization ------------------------------------------

def evaluate(
    detections: Sequence[Detection],
    gts: Sequence[Annotation],
    criterion: MatchCriterion = MatchCriterion(),
    averaging: str = "micro",
) -> dict:
    """Full report: per-class P/R/F1/AP plus a mean F1 across classes.

    Matching runs per image. "micro" pools TP/FP/FN counts over all images
    before computing the mean F1; "macro" averages per-image F1 scores.
    """
    if averaging not in ("micro", "macro"):
        raise ValueError(f"averaging must be 'micro' or 'macro', got {averaging!r}")
    image_ids = sorted({d.image_id for d in detections} | {g.image_id for g in gts})
    per_class_counts = {label: [0, 0, 0] for label in Label}
    per_image_f1: List[float] = []
    for image_id in image_ids:
        img_dets = [d for d in detections if d.image_id == image_id]
        img_gts = [g for g in gts if g.image_id == image_id]
        img_counts = [0, 0, 0]
        for label in Label:
            m = match_detections(
                [d for d in img_dets if d.label == label],
                [g for g in img_gts if g.label == label],
                criterion,
            )
            for acc in (per_class_counts[label], img_counts):
                acc[0] += m.tp
                acc[1] += m.fp
                acc[2] += m.fn
        per_image_f1.append(_prf(*img_counts)[2])

    curves = pr_curve(detections, gts, criterion)
    per_class = {}
    pooled = [0, 0, 0]
    for label in Label:
        tp, fp, fn = per_class_counts[label]
        pooled = [pooled[i] + per_class_counts[label][i] for i in range(3)]
        p, r, f = _prf(tp, fp, fn)
        entry = {"precision": p, "recall": r, "f1": f, "ap": 0.0, "best_f1": 0.0}
        if label in curves:
            entry["ap"] = average_precision(curves[label])
            entry["best_f1"] = best_f1(curves[label])
        per_class[label.value] = entry

    if averaging == "micro":
        mean_f1 = _prf(*pooled)[2]
    else:
        mean_f1 = sum(per_image_f1) / len(per_image_f1) if per_image_f1 else 0.0
    return {"per_class": per_class, "mean_f1": mean_f1}


def export_pr(curves: Dict[Label, PRCurve], path: str) -> None:
    """Write curves as CSV rows class,threshold,recall,precision."""
    lines = ["class,threshold,recall,precision"]
    for label in Label:
        if label not in curves:
            continue
        for thr, r, p in curves[label].points:
            lines.append(f"{label.value},{thr!r},{r!r},{p!r}")
    try:
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise OSError(f"failed writing PR export to {path}: {e}") from e


def import_pr(path: str) -> Dict[Label, PRCurve]:
    """Read back an export_pr CSV."""
    curves: Dict[Label, PRCurve] = {}
    with open(path) as f:
        rows = f.read().splitlines()
    for row in rows[1:]:
        cls, thr, r, p = row.split(",")
        label = Label(cls)
        curves.setdefault(label, PRCurve(label=label)).points.append(
            (float(thr), float(r), float(p))
        )
    return curves


def export_pr_svg(curves: Dict[Label, PRCurve], path: str, size: int = 400) -> None:
    """Minimal SVG polyline rendering of the PR curves."""
    colors = {Label.MITOSIS: "#c0392b", Label.HARD_NEGATIVE: "#2980b9"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white" stroke="black"/>',
    ]
    for label, curve in curves.items():
        pts = " ".join(
            f"{r * size:.2f},{(1 - p) * size:.2f}" for _, r, p in sorted(curve.points)
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{colors[label]}" stroke-width="2"/>'
        )
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def detections_from_json(text: str) -> List[Detection]:
    """Parse the detection file format; accepts one object or a list of them.

    Schema per image: {"image_id", "detections": [{"bbox", "label", "score"}]}.
    """
    obj = json.loads(text)
    entries = obj if isinstance(obj, list) else [obj]
    out: List[Detection] = []
    for entry in entries:
        image_id = entry["image_id"]
        for i, d in enumerate(entry["detections"]):
            try:
                label = Label(d["label"])
            except ValueError:
                raise ValueError(
                    f"detections[{i}].label: unknown label {d.get('label')!r}"
                ) from None
            out.append(
                Detection(BBox(*d["bbox"]), label, float(d["score"]), image_id)
            )
    return out


def detections_to_json(detections: Sequence[Detection]) -> str:
    by_image: Dict[str, List[Detection]] = {}
    for d in detections:
        by_image.setdefault(d.image_id, []).append(d)
    entries = [
        {
            "image_id": image_id,
            "detections": [
                {"bbox": list(d.box.as_tuple()), "label": d.label.value, "score": d.score}
                for d in dets
            ],
        }
        for image_id, dets in sorted(by_image.items())
    ]
    return json.dumps(entries if len(entries) != 1 else entries[0], indent=2)
