"""Pluggable person/subject segmenters.

A segmenter maps a uint8 (h, w, 3) RGB image to a uint8 (h, w) alpha
mask. The default is a self-contained border-contrast saliency model; a
torchvision instance-segmentation wrapper is available when pretrained
weights can be loaded. Model choice is configuration, not contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ModelUnavailableError(RuntimeError):
    """Requested model cannot be constructed in this environment."""


@dataclass
class BorderContrastSaliency:
    """Salient-subject mask from color distance to a border-based background fit.

    The background is modeled twice, as a vertical blend of the top and
    bottom border rows and as a horizontal blend of the left and right
    border columns; a pixel's background residual is the smaller of the
    two distances, which handles flat fills and linear gradients exactly
    and smooth textures approximately. The residual ramps to alpha
    between ramp_lo and ramp_hi (after optional brightness
    normalization), so low-contrast texture stays below the mask
    threshold while a distinctly colored subject saturates.
    """

    ramp_lo: float = 60.0
    ramp_hi: float = 130.0
    normalize_brightness: bool = True

    def __call__(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        h, w, _ = img.shape
        top, bottom = img[0], img[-1]
        left, right = img[:, 0], img[:, -1]
        ty = np.linspace(0.0, 1.0, h)[:, None, None]
        tx = np.linspace(0.0, 1.0, w)[None, :, None]
        vertical = top[None, :, :] * (1 - ty) + bottom[None, :, :] * ty
        horizontal = left[:, None, :] * (1 - tx) + right[:, None, :] * tx
        dist_v = np.sqrt(((img - vertical) ** 2).sum(axis=2))
        dist_h = np.sqrt(((img - horizontal) ** 2).sum(axis=2))
        residual = np.minimum(dist_v, dist_h)
        lo, hi = self.ramp_lo, self.ramp_hi
        if self.normalize_brightness:
            border_luma = float(np.concatenate([top, bottom, left, right]).mean())
            scale = min(max(border_luma / 60.0, 0.35), 1.0)
            lo, hi = lo * scale, hi * scale
        alpha = np.clip((residual - lo) / (hi - lo), 0.0, 1.0)
        return np.floor(alpha * 255.0 + 0.5).astype(np.uint8)


class TorchvisionPersonSegmenter:
    """Union of person-class instance masks from a torchvision detector.

    Needs torch, torchvision, and downloadable pretrained weights; raises
    ModelUnavailableError otherwise.
    """

    PERSON_CLASS = 1  # COCO label id used by torchvision detection models
    score_threshold = 0.5
    mask_threshold = 0.5

    def __init__(self) -> None:
        try:
            import torch
            from torchvision.models.detection import maskrcnn_resnet50_fpn
        except ImportError as exc:
            raise ModelUnavailableError(f"torch/torchvision not importable: {exc}") from exc
        try:
            self._model = maskrcnn_resnet50_fpn(weights="DEFAULT")
        except Exception as exc:  # weight download failure, hub errors
            raise ModelUnavailableError(f"pretrained weights unavailable: {exc}") from exc
        self._model.eval()
        self._torch = torch

    def __call__(self, image: np.ndarray) -> np.ndarray:
        torch = self._torch
        tensor = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).float() / 255.0
        with torch.no_grad():
            output = self._model([tensor])[0]
        h, w, _ = image.shape
        union = np.zeros((h, w), dtype=np.float64)
        for label, score, mask in zip(output["labels"], output["scores"], output["masks"]):
            if int(label) == self.PERSON_CLASS and float(score) >= self.score_threshold:
                union = np.maximum(union, mask[0].numpy())
        return np.floor((union >= self.mask_threshold) * 255.0 + 0.5).astype(np.uint8)


def build_model(spec: str):
    """Model factory: "saliency" or "torchvision:maskrcnn"."""
    if spec == "saliency":
        return BorderContrastSaliency()
    if spec in ("torchvision:maskrcnn", "torchvision:maskrcnn_resnet50_fpn"):
        return TorchvisionPersonSegmenter()
    raise ModelUnavailableError(f"unknown model spec {spec!r}")
