"""Command-line surface wiring the library into the end-to-end flow:

    normalize -> tile -> split/augment -> (external detector) -> evaluate

Logs go to standard error; machine-readable output goes to files or
standard output. Exit codes: 0 success, 1 input error, 2 config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import augment as aug
from . import cascade as casc
from . import stain, tiler
from .evaluate import (
    Detection,
    detections_from_json,
    evaluate as evaluate_detections,
    export_pr,
    export_pr_svg,
    pr_curve,
    stitch_detections,
)
from .config import PipelineConfig, load_config
from .errors import ConfigError, MitoforgeError

log = logging.getLogger("mitoforge")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2


def write_atomic(path: Path, data: bytes | str) -> None:
    """Write via a temp file in the same directory, then rename."""
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_png_atomic(path: Path, array: np.ndarray) -> None:
    import io

    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    write_atomic(path, buf.getvalue())


def _load_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except Exception as e:
        raise MitoforgeError(f"cannot read image {path}: {e}") from e


def _load_reference(reference: str, cfg: PipelineConfig) -> stain.StainBasis:
    path = Path(reference)
    if path.suffix == ".json":
        return stain.StainBasis.from_json(path.read_text())
    patch = _load_image(path)
    od = stain.rgb_to_od(patch, io=cfg.io)
    return stain.estimate_stain_basis(
        od, beta=cfg.stain.beta, alpha=cfg.stain.alpha, io=cfg.io
    )


# --- commands ---------------------------------------------------------------

def cmd_stain_normalize(args, cfg: PipelineConfig) -> int:
    in_dir, out_dir = Path(args.input_dir), Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reference = _load_reference(args.reference, cfg)
    write_atomic(out_dir / "reference_basis.json", reference.to_json())

    images = sorted(
        p for p in in_dir.iterdir() if p.suffix.lower() in (".png", ".tif", ".tiff", ".jpg", ".jpeg")
    )
    if not images:
        log.warning("no images found in %s", in_dir)
        return EXIT_OK

    failures = []

    def work(path: Path):
        try:
            patch = _load_image(path)
        except MitoforgeError as e:
            log.error("%s", e)
            failures.append(path)
            return
        try:
            out = stain.normalize_to_reference(
                patch, reference, io=cfg.io, beta=cfg.stain.beta, alpha=cfg.stain.alpha
            )
        except stain.DegenerateTissue as e:
            log.warning("passing through %s unmodified: %s", path.name, e)
            out = patch
        save_png_atomic(out_dir / (path.stem + ".png"), out)

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        list(pool.map(work, images))
    if failures:
        log.error("%d image(s) failed to read", len(failures))
        return EXIT_INPUT
    return EXIT_OK


def cmd_tile(args, cfg: PipelineConfig) -> int:
    image = _load_image(Path(args.image))
    image_id, (w, h), annotations = tiler.annotations_from_json(
        Path(args.annotations).read_text()
    )
    if (image.shape[1], image.shape[0]) != (w, h):
        log.warning(
            "annotation size %dx%d differs from image %dx%d",
            w, h, image.shape[1], image.shape[0],
        )
    grid = tiler.build_tile_grid(
        (image.shape[1], image.shape[0]), cfg.tiling.tile_size, cfg.tiling.stride
    )
    records = tiler.project_annotations(annotations, grid, cfg.tiling.min_visible_iou)
    for r in records:
        r.image_id = image_id
    if not args.keep_empty:
        records = tiler.filter_nonempty(records)

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts = grid.tile_size
    for r in records:
        ox, oy = r.origin
        save_png_atomic(out_dir / tiler.patch_filename(r), image[oy : oy + ts, ox : ox + ts])
    manifest = "\n".join(tiler.record_to_json(r) for r in records)
    write_atomic(out_dir / "manifest.jsonl", manifest + ("\n" if manifest else ""))
    log.info("wrote %d patches", len(records))
    return EXIT_OK


def _read_manifest(path: Path):
    return [tiler.record_from_json(line) for line in path.read_text().splitlines() if line]


def cmd_split(args, cfg: PipelineConfig) -> int:
    records = _read_manifest(Path(args.manifest))
    seed = args.seed if args.seed is not None else cfg.seed
    if args.train_fraction is not None:
        split = tiler.split_random(records, seed, train_fraction=args.train_fraction)
    else:
        split = tiler.split_random(
            records, seed, train_count=args.train_count, val_count=args.val_count
        )
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train.jsonl", split.train), ("val.jsonl", split.val)):
        body = "\n".join(tiler.record_to_json(r) for r in part)
        write_atomic(out_dir / name, body + ("\n" if body else ""))
    log.info("split %d records into %d train / %d val", len(records), len(split.train), len(split.val))
    return EXIT_OK


def cmd_augment(args, cfg: PipelineConfig) -> int:
    records = _read_manifest(Path(args.manifest))
    patch_dir, out_dir = Path(args.patch_dir), Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.seed
    out_records = []
    for idx, rec in enumerate(records):
        patch = _load_image(patch_dir / tiler.patch_filename(rec))
        rng = random.Random(seed * 1_000_003 + idx)  # per-patch stream, shardable
        boxes = [a.box for a in rec.annotations]
        out_patch, kept = aug.augment_patch_indexed(patch, boxes, cfg.augment, rng)
        anns = [
            tiler.Annotation(box=b, label=rec.annotations[src].label, image_id=rec.image_id)
            for src, b in kept
        ]
        out_rec = tiler.PatchRecord(
            image_id=f"{rec.image_id}_aug{idx}", origin=rec.origin, annotations=anns
        )
        save_png_atomic(out_dir / tiler.patch_filename(out_rec), out_patch)
        out_records.append(out_rec)
    body = "\n".join(tiler.record_to_json(r) for r in out_records)
    write_atomic(out_dir / "manifest.jsonl", body + ("\n" if body else ""))
    log.info("augmented %d patches", len(out_records))
    return EXIT_OK


def cmd_simulate_cascade(args, cfg: PipelineConfig) -> int:
    proposals = [d.box for d in detections_from_json(Path(args.proposals).read_text())]
    _, _, gts = tiler.annotations_from_json(Path(args.gts).read_text())
    seed = args.seed if args.seed is not None else cfg.seed
    report = casc.run_cascade(
        proposals,
        gts,
        cfg.cascade.stages(),
        refine_blend=cfg.cascade.refine_blend,
        rng=random.Random(seed),
    )
    text = report.to_json()
    if args.output:
        write_atomic(Path(args.output), text + "\n")
    else:
        print(text)
    return EXIT_OK


def _evaluate_common(args, cfg: PipelineConfig):
    detections = detections_from_json(Path(args.detections).read_text())
    gt_image_id, _, gts = tiler.annotations_from_json(Path(args.gts).read_text())
    if args.origins:
        # JSON object mapping tile image_id -> [x, y] global origin.
        origins = json.loads(Path(args.origins).read_text())
        by_tile = {}
        for d in detections:
            by_tile.setdefault(d.image_id, []).append(d)
        per_tile = []
        for tile_id, dets in sorted(by_tile.items()):
            if tile_id not in origins:
                log.warning("no origin for tile %s; assuming (0,0)", tile_id)
            ox, oy = origins.get(tile_id, (0, 0))
            per_tile.append(((ox, oy), dets))
        stitched = stitch_detections(per_tile, cfg.eval.nms_threshold)
        detections = [
            Detection(d.box, d.label, d.score, gt_image_id) for d in stitched
        ]
    return detections, gts


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    detections, gts = _evaluate_common(args, cfg)
    criterion = cfg.eval.match_criterion()
    if cfg.eval.score_threshold > 0:
        detections = [d for d in detections if d.score >= cfg.eval.score_threshold]
    report = evaluate_detections(detections, gts, criterion, averaging=cfg.eval.averaging)
    text = json.dumps(report, indent=2)
    if args.output:
        write_atomic(Path(args.output), text + "\n")
    else:
        print(text)
    if args.pr_csv:
        curves = pr_curve(detections, gts, criterion)
        export_pr(curves, args.pr_csv)
    return EXIT_OK


def cmd_pr_export(args, cfg: PipelineConfig) -> int:
    detections, gts = _evaluate_common(args, cfg)
    curves = pr_curve(detections, gts, cfg.eval.match_criterion())
    export_pr(curves, args.output)
    if args.svg:
        export_pr_svg(curves, args.svg)
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mitoforge", description=__doc__)
    parser.add_argument("--config", help="TOML or JSON pipeline config")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stain-normalize", help="Macenko-normalize a directory of patches")
    p.add_argument("input_dir")
    p.add_argument("output_dir")
    p.add_argument("--reference", required=True, help="basis JSON or reference image")
    p.set_defaults(func=cmd_stain_normalize)

    p = sub.add_parser("tile", help="tile an annotated field into patches")
    p.add_argument("image")
    p.add_argument("annotations")
    p.add_argument("output_dir")
    p.add_argument("--keep-empty", action="store_true")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("split", help="seeded random train/val split of a manifest")
    p.add_argument("manifest")
    p.add_argument("output_dir")
    p.add_argument("--train-count", type=int)
    p.add_argument("--val-count", type=int)
    p.add_argument("--train-fraction", type=float)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment", help="apply the augmentation pipeline to a manifest")
    p.add_argument("manifest")
    p.add_argument("patch_dir")
    p.add_argument("output_dir")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("simulate-cascade", help="run cascade assignment on proposals")
    p.add_argument("proposals", help="detection JSON used as proposals")
    p.add_argument("gts", help="annotation JSON")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate_cascade)

    p = sub.add_parser("evaluate", help="score detections against ground truth")
    p.add_argument("detections")
    p.add_argument("gts")
    p.add_argument("-o", "--output")
    p.add_argument("--pr-csv")
    p.add_argument("--origins", help="JSON list of tile origins for stitching")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pr-export", help="write PR curves as CSV (and optional SVG)")
    p.add_argument("detections")
    p.add_argument("gts")
    p.add_argument("output")
    p.add_argument("--svg")
    p.add_argument("--origins")
    p.set_defaults(func=cmd_pr_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    try:
        return args.func(args, cfg)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (MitoforgeError, OSError, ValueError) as e:
        log.error("%s", e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
