"""Part-based object detection and segmentation from tiny training sets.

Training images with binary masks become a codebook of local appearance
codewords, each carrying spatial occurrences and a small codebook of
boundary-shape descriptors.  Detection matches features against the
codebook, votes for object centers, and finds modes by mean-shift;
segmentation splats shape-derived foreground strengths into a per-pixel
likelihood and cleans it up with dense-CRF mean-field inference.
"""

from .codebook import (
    Codeword,
    Model,
    ModelParams,
    Occurrence,
    build_model,
    load_model,
    save_model,
)
from .config import Config, default_config, load_config, save_config
from .detection import DetectionParams, Hypothesis, detect_objects, refine_hypothesis
from .estimator import BoundaryShapeModel
from .evaluation import (
    FoldSpec,
    SegDetection,
    average_precision,
    coco_map,
    make_folds,
    mask_iou,
    mean_matched_iou,
)
from .features import FeatureParams, Keypoint, compute_descriptors, detect_harris_laplace
from .segmentation import CrfParams, meanfield_infer, segment, segment_image
from .shape_descriptor import ShapeDescriptor, cell_strengths, quantize
from .synthetic import generate_dataset, generate_scene

__version__ = "0.1.0"

__all__ = [
    "BoundaryShapeModel",
    "Codeword",
    "Config",
    "CrfParams",
    "DetectionParams",
    "FeatureParams",
    "FoldSpec",
    "Hypothesis",
    "Keypoint",
    "Model",
    "ModelParams",
    "Occurrence",
    "SegDetection",
    "ShapeDescriptor",
    "average_precision",
    "build_model",
    "cell_strengths",
    "coco_map",
    "compute_descriptors",
    "default_config",
    "detect_harris_laplace",
    "detect_objects",
    "generate_dataset",
    "generate_scene",
    "load_config",
    "load_model",
    "make_folds",
    "mask_iou",
    "mean_matched_iou",
    "meanfield_infer",
    "quantize",
    "refine_hypothesis",
    "save_config",
    "save_model",
    "segment",
    "segment_image",
    "__version__",
]
