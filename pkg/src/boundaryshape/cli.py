"""Command-line interface.

Verbs: init-config, train, detect, segment, eval, folds, synth.  Global
flags (--config, --jobs, --seed, --debug) are accepted by every verb.
Exit codes: 0 success, 1 usage error, 2 data error.  All file formats are
documented in docs/formats.md; every JSON output carries format_version.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .codebook import Model, load_model, save_model, build_model
from .config import Config, default_config, load_config, save_config
from .detection import Hypothesis, detect_objects
from .evaluation import (
    SegDetection,
    average_precision,
    coco_map,
    make_folds,
    mean_matched_iou,
)
from .imageops import load_image, load_mask, save_image, save_mask
from .segmentation import segment
from .synthetic import SHAPES, generate_dataset

log = logging.getLogger(__name__)

DETECTIONS_FORMAT_VERSION = 1
PREDICTIONS_FORMAT_VERSION = 1
METRICS_FORMAT_VERSION = 1
FOLDS_FORMAT_VERSION = 1

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class UsageError(Exception):
    """Bad command line; maps to exit code 1."""


class DataError(Exception):
    """Unreadable or inconsistent inputs; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract reserves 2 for data
    # errors, so route usage failures through UsageError instead.
    def error(self, message):
        raise UsageError(message)


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


@dataclass
class Dataset:
    """Images and masks resolved from a root directory."""

    root: str
    ids: list[str]
    image_paths: dict[str, str]
    mask_paths: dict[str, str]
    pairs: list[tuple[str, ...]]


def load_dataset(root: str, require_masks: bool = True) -> Dataset:
    """Resolve the images/ + masks/ layout, with optional pairs.txt."""
    img_dir = os.path.join(root, "images")
    mask_dir = os.path.join(root, "masks")
    if not os.path.isdir(img_dir):
        raise DataError(f"no images/ directory under {root}")
    image_paths = {}
    for name in sorted(os.listdir(img_dir)):
        if name.lower().endswith(IMAGE_EXTENSIONS):
            image_paths[_stem(name)] = os.path.join(img_dir, name)
    if not image_paths:
        raise DataError(f"no images found under {img_dir}")
    mask_paths = {}
    if os.path.isdir(mask_dir):
        for name in sorted(os.listdir(mask_dir)):
            if name.lower().endswith(IMAGE_EXTENSIONS):
                mask_paths[_stem(name)] = os.path.join(mask_dir, name)
    if require_masks:
        missing = sorted(set(image_paths) - set(mask_paths))
        if missing:
            raise DataError(
                f"images without masks under {root}: {', '.join(missing[:5])}"
            )
    pairs = _load_pairs(os.path.join(root, "pairs.txt"), set(image_paths))
    return Dataset(
        root=root,
        ids=sorted(image_paths),
        image_paths=image_paths,
        mask_paths=mask_paths,
        pairs=pairs,
    )


def _load_pairs(path: str, known_ids: set[str]) -> list[tuple[str, ...]]:
    if not os.path.isfile(path):
        return []
    pairs = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            ids = tuple(_stem(t) for t in tokens)
            unknown = [i for i in ids if i not in known_ids]
            if unknown:
                raise DataError(
                    f"pairs.txt line {ln} names unknown images: {unknown}"
                )
            if len(ids) >= 2:
                pairs.append(ids)
    return pairs


def _load_config_arg(args) -> Config:
    if args.config is None:
        return default_config()
    try:
        return load_config(args.config)
    except FileNotFoundError:
        raise DataError(f"config file not found: {args.config}")
    except (json.JSONDecodeError, ValueError, KeyError) as e:
        raise DataError(f"bad config {args.config}: {e}")


def _map_images(fn, items, jobs: int) -> list:
    """Apply fn over items preserving order; threads when jobs > 1."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _hypothesis_doc(h: Hypothesis) -> dict:
    return {
        "center": [round(h.cx, 4), round(h.cy, 4)],
        "scale": round(h.s, 6),
        "score": round(h.score, 8),
        "roi": [round(v, 2) for v in h.roi],
        "flags": list(h.flags),
    }


def cmd_init_config(args) -> int:
    cfg = default_config()
    save_config(cfg, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config_arg(args)
    ds = load_dataset(args.dataset, require_masks=True)
    images, masks = [], []
    for image_id in ds.ids:
        try:
            images.append(load_image(ds.image_paths[image_id]))
            masks.append(load_mask(ds.mask_paths[image_id]))
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read {image_id}: {e}")
    try:
        model = build_model(
            images, masks, cfg.model, class_name=cfg.class_name, image_ids=ds.ids
        )
    except ValueError as e:
        raise DataError(str(e))
    save_model(model, args.out)
    n_occ = sum(len(cw.occurrences) for cw in model.codewords)
    shape_sizes = [len(cw.shape_codebook) for cw in model.codewords]
    print(f"codewords: {len(model.codewords)}")
    print(f"occurrences: {n_occ}")
    print(f"shape codebook sizes: {shape_sizes}")
    print(f"wrote {args.out}")
    return 0


def _load_model_arg(path: str) -> Model:
    try:
        return load_model(path)
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}")
    except (json.JSONDecodeError, ValueError, KeyError) as e:
        raise DataError(f"bad model {path}: {e}")


def _read_image(path: str) -> np.ndarray:
    try:
        return load_image(path)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read image {path}: {e}")


def cmd_detect(args) -> int:
    cfg = _load_config_arg(args)
    model = _load_model_arg(args.model)
    params = cfg.detection

    def run(path: str):
        image = _read_image(path)
        return detect_objects(image, model, params)

    results = _map_images(run, args.images, args.jobs)
    doc = {
        "format_version": DETECTIONS_FORMAT_VERSION,
        "class_name": model.class_name,
        "images": [
            {
                "image_id": _stem(path),
                "path": path,
                "hypotheses": [_hypothesis_doc(h) for h in hyps],
            }
            for path, hyps in zip(args.images, results)
        ],
    }
    _write_json(doc, args.out)
    total = sum(len(h) for h in results)
    print(f"{total} detections over {len(args.images)} images; wrote {args.out}")
    return 0


def _likelihood_png(likelihood: np.ndarray) -> np.ndarray:
    """Signed strength field as a u8 gray image, zero at 128."""
    peak = float(np.abs(likelihood).max())
    if peak == 0.0:
        return np.full(likelihood.shape, 128, dtype=np.uint8)
    scaled = likelihood / peak  # [-1, 1]
    return np.clip(128 + 127 * scaled, 0, 255).astype(np.uint8)


def _overlay_png(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Foreground tinted green, background dimmed."""
    img = image.astype(np.float64)
    if img.max() > 1.0:
        img = img / 255.0
    out = 0.55 * img
    fg = mask.astype(bool)
    out[fg] = 0.5 * img[fg] + 0.5 * np.array([0.0, 1.0, 0.0])
    return (np.clip(out, 0.0, 1.0) * 255).astype(np.uint8)


def cmd_segment(args) -> int:
    cfg = _load_config_arg(args)
    model = _load_model_arg(args.model)
    os.makedirs(args.out, exist_ok=True)

    def run(path: str):
        image = _read_image(path)
        hyps = detect_objects(image, model, cfg.detection)
        H, W = image.shape[:2]
        merged = np.zeros((H, W), dtype=np.uint8)
        entries = []
        like_sum = np.zeros((H, W))
        for k, h in enumerate(hyps):
            mask, likelihood, _ = segment(
                image,
                h,
                model,
                cfg.crf,
                mode=cfg.inference_mode,
                return_diagnostics=True,
            )
            merged |= mask
            like_sum += likelihood
            det_name = f"{_stem(path)}_det{k}.png"
            save_mask(mask, os.path.join(args.out, det_name))
            entry = _hypothesis_doc(h)
            entry["mask_file"] = det_name
            entries.append(entry)
        save_mask(merged, os.path.join(args.out, f"{_stem(path)}.png"))
        if args.debug:
            save_image(
                _likelihood_png(like_sum),
                os.path.join(args.out, f"{_stem(path)}_debug_likelihood.png"),
            )
            save_image(
                _overlay_png(image, merged),
                os.path.join(args.out, f"{_stem(path)}_debug_overlay.png"),
            )
        return entries

    results = _map_images(run, args.images, args.jobs)
    doc = {
        "format_version": PREDICTIONS_FORMAT_VERSION,
        "class_name": model.class_name,
        "images": [
            {"image_id": _stem(path), "path": path, "detections": entries}
            for path, entries in zip(args.images, results)
        ],
    }
    _write_json(doc, os.path.join(args.out, "predictions.json"))
    print(f"segmented {len(args.images)} images into {args.out}")
    return 0


def cmd_eval(args) -> int:
    # accept either the segment output directory or predictions.json itself
    pred_path = args.predictions
    if os.path.isdir(pred_path):
        pred_path = os.path.join(pred_path, "predictions.json")
    pred_dir = os.path.dirname(pred_path) or "."
    try:
        with open(pred_path, encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise DataError(f"predictions file not found: {pred_path}")
    except json.JSONDecodeError as e:
        raise DataError(f"bad predictions file {pred_path}: {e}")
    if doc.get("format_version") != PREDICTIONS_FORMAT_VERSION:
        raise DataError(f"unsupported predictions format in {pred_path}")

    # Each ground-truth mask file counts as one object instance.
    ds = load_dataset(args.dataset, require_masks=True)
    truths: dict[str, list[np.ndarray]] = {}
    for image_id in ds.ids:
        truths[image_id] = [load_mask(ds.mask_paths[image_id])]

    detections = []
    n_images = 0
    for image_doc in doc.get("images", []):
        image_id = image_doc["image_id"]
        if image_id not in truths:
            raise DataError(f"prediction for unknown image id: {image_id}")
        n_images += 1
        for det in image_doc.get("detections", []):
            mask_path = os.path.join(pred_dir, det["mask_file"])
            try:
                mask = load_mask(mask_path)
            except (OSError, ValueError) as e:
                raise DataError(f"cannot read predicted mask {mask_path}: {e}")
            detections.append(SegDetection(image_id, mask, float(det["score"])))

    class_name = doc.get("class_name", "object")
    ap50 = average_precision(detections, truths, iou_thresh=0.5)
    cmap = coco_map(detections, truths)
    miou = mean_matched_iou(detections, truths, iou_thresh=0.5)
    metrics = {
        "format_version": METRICS_FORMAT_VERSION,
        "n_images": n_images,
        "n_detections": len(detections),
        "per_class": {
            class_name: {
                "ap50": round(ap50, 6),
                "coco_map": round(cmap, 6),
                "mean_matched_iou": round(miou, 6),
            }
        },
        "ap50": round(ap50, 6),
        "coco_map": round(cmap, 6),
        "mean_matched_iou": round(miou, 6),
    }
    _write_json(metrics, args.out)
    print(f"AP@0.5 {ap50:.4f}  mAP {cmap:.4f}  mean IoU {miou:.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_folds(args) -> int:
    cfg = _load_config_arg(args)
    ds = load_dataset(args.dataset, require_masks=False)
    seed = args.seed if args.seed is not None else cfg.fold_seed
    try:
        spec = make_folds(ds.ids, args.n_folds, pairs=ds.pairs, seed=seed)
    except ValueError as e:
        raise DataError(str(e))
    doc = {
        "format_version": FOLDS_FORMAT_VERSION,
        "n_folds": spec.n_folds,
        "seed": seed,
        "assignments": dict(sorted(spec.assignments.items())),
    }
    _write_json(doc, args.out)
    sizes = [0] * spec.n_folds
    for fold in spec.assignments.values():
        sizes[fold] += 1
    print(f"fold sizes: {sizes}")
    print(f"wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    if args.n_images < 1:
        raise DataError("n-images must be >= 1")
    seed = args.seed if args.seed is not None else 0
    try:
        manifest = generate_dataset(
            args.out, args.n_images, seed=seed, shape=args.shape, size=args.size
        )
    except OSError as e:
        raise DataError(f"cannot write dataset: {e}")
    print(f"generated {len(manifest['images'])} images under {args.out}")
    return 0


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="config JSON file")
    common.add_argument(
        "--jobs", type=int, default=1, metavar="N", help="worker threads"
    )
    common.add_argument("--seed", type=int, default=None, metavar="N")
    common.add_argument("--debug", action="store_true")

    parser = _Parser(prog="boundaryshape", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "init-config", parents=[common], help="write a config with all defaults"
    )
    p.add_argument("-o", "--out", default="config.json")
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("train", parents=[common], help="build a model from a dataset")
    p.add_argument("dataset", help="dataset root (images/ + masks/)")
    p.add_argument("-o", "--out", default="model.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="detect objects in images")
    p.add_argument("model")
    p.add_argument("images", nargs="+")
    p.add_argument("-o", "--out", default="detections.json")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser(
        "segment", parents=[common], help="detect and segment objects in images"
    )
    p.add_argument("model")
    p.add_argument("images", nargs="+")
    p.add_argument("-o", "--out", default="segmentation", help="output directory")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser(
        "eval", parents=[common], help="score predictions against ground truth"
    )
    p.add_argument(
        "predictions", help="segment output directory or its predictions.json"
    )
    p.add_argument("dataset", help="dataset root with ground-truth masks")
    p.add_argument("-o", "--out", default="metrics.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("folds", parents=[common], help="assign images to folds")
    p.add_argument("dataset")
    p.add_argument("-n", "--n-folds", type=int, default=3)
    p.add_argument("-o", "--out", default="folds.json")
    p.set_defaults(func=cmd_folds)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("out", help="output directory")
    p.add_argument("-n", "--n-images", type=int, default=30)
    p.add_argument("--shape", choices=SHAPES, default="disc")
    p.add_argument("--size", type=int, default=96)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    if args.debug:
        logging.getLogger("boundaryshape").setLevel(logging.DEBUG)
    if args.jobs < 1:
        print("usage error: --jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
