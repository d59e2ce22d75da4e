"""Run configuration: one JSON document holding every tunable.

The config round-trips losslessly; `default_config()` materializes every
parameter so a written file doubles as documentation of the defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .codebook import ModelParams
from .detection import DetectionParams
from .features import FeatureParams
from .segmentation import CrfParams

CONFIG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Config:
    model: ModelParams = field(default_factory=ModelParams)
    detection: DetectionParams = field(default_factory=DetectionParams)
    crf: CrfParams = field(default_factory=CrfParams)
    inference_mode: str = "fast"  # "fast" or "exact"
    class_name: str = "object"
    fold_seed: int = 0

    def __post_init__(self) -> None:
        if self.inference_mode not in ("fast", "exact"):
            raise ValueError("inference_mode must be 'fast' or 'exact'")


def default_config() -> Config:
    return Config()


def config_to_dict(cfg: Config) -> dict:
    doc = {
        "format_version": CONFIG_FORMAT_VERSION,
        "model": dataclasses.asdict(cfg.model),
        "detection": dataclasses.asdict(cfg.detection),
        "crf": dataclasses.asdict(cfg.crf),
        "inference_mode": cfg.inference_mode,
        "class_name": cfg.class_name,
        "fold_seed": cfg.fold_seed,
    }
    doc["detection"]["refine_scale_factors"] = list(
        cfg.detection.refine_scale_factors
    )
    return doc


def config_from_dict(doc: dict) -> Config:
    version = doc.get("format_version")
    if version != CONFIG_FORMAT_VERSION:
        raise ValueError(f"unsupported config format version: {version!r}")
    model_doc = dict(doc["model"])
    feat = FeatureParams(**model_doc.pop("features"))
    det_doc = dict(doc["detection"])
    det_doc["refine_scale_factors"] = tuple(det_doc["refine_scale_factors"])
    return Config(
        model=ModelParams(features=feat, **model_doc),
        detection=DetectionParams(**det_doc),
        crf=CrfParams(**doc["crf"]),
        inference_mode=doc["inference_mode"],
        class_name=doc["class_name"],
        fold_seed=int(doc["fold_seed"]),
    )


def save_config(cfg: Config, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: str) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))
