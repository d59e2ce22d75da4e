"""Scikit-learn style estimator wrapping the train/detect/segment pipeline.

`fit` consumes (images, masks) pairs, `predict` returns per-image detection
hypotheses, and `transform` returns per-image segmentation masks.  All heavy
lifting lives in the functional modules; this class only adapts the API and
validates inputs.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .codebook import ModelParams, build_model
from .detection import DetectionParams, Hypothesis, detect_objects
from .evaluation import mask_iou
from .segmentation import CrfParams, segment_image
from .validation import check_mask


class BoundaryShapeModel(TransformerMixin, BaseEstimator):
    """Part-based detector and segmenter learned from a handful of masks.

    Parameters mirror the pipeline defaults; `bandwidth=None` derives the
    mean-shift bandwidth from the training objects' mean diagonal.
    """

    def __init__(
        self,
        t: float = 0.7,
        beta: float = 0.4,
        base_size: int = 21,
        bandwidth: float | None = None,
        lambda1: float = 1.0,
        lambda2: float = 0.5,
        lambda3: float = 1.0,
        iterations: int = 10,
        inference_mode: str = "fast",
        class_name: str = "object",
    ):
        self.t = t
        self.beta = beta
        self.base_size = base_size
        self.bandwidth = bandwidth
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.iterations = iterations
        self.inference_mode = inference_mode
        self.class_name = class_name

    def _check_images(self, X) -> list[np.ndarray]:
        if not isinstance(X, (list, tuple)) or len(X) == 0:
            raise ValueError("X must be a non-empty list of images")
        return [np.asarray(img) for img in X]

    def fit(self, X, y):
        """Learn the codebook from images X and binary masks y."""
        X = self._check_images(X)
        if y is None or len(y) != len(X):
            raise ValueError("y must hold one mask per image")
        masks = [check_mask(np.asarray(m), f"y[{i}]") for i, m in enumerate(y)]
        params = ModelParams(t=self.t, beta=self.beta, base_size=self.base_size)
        self.model_ = build_model(X, masks, params, class_name=self.class_name)
        self.n_codewords_ = len(self.model_.codewords)
        return self

    def _detection_params(self) -> DetectionParams:
        return DetectionParams(bandwidth=self.bandwidth)

    def _crf_params(self) -> CrfParams:
        return CrfParams(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            lambda3=self.lambda3,
            iterations=self.iterations,
        )

    def predict(self, X) -> list[list[Hypothesis]]:
        """Detection hypotheses per image, best first."""
        check_is_fitted(self, "model_")
        X = self._check_images(X)
        params = self._detection_params()
        return [detect_objects(img, self.model_, params) for img in X]

    def transform(self, X) -> list[np.ndarray]:
        """Binary segmentation mask per image (union over detections)."""
        check_is_fitted(self, "model_")
        X = self._check_images(X)
        det = self._detection_params()
        crf = self._crf_params()
        out = []
        for img in X:
            hyps = detect_objects(img, self.model_, det)
            out.append(
                segment_image(img, hyps, self.model_, crf, mode=self.inference_mode)
            )
        return out

    def score(self, X, y) -> float:
        """Mean IoU of predicted masks against ground truth."""
        masks = self.transform(X)
        return float(
            np.mean([mask_iou(p, np.asarray(g)) for p, g in zip(masks, y)])
        )
