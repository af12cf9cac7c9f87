"""Matching-accuracy metrics: endpoint-error accuracy at a normalized scale,
PCK over keypoints, and mask IoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (AffineField, ShapeError, apply_affine, field_at,
                       resize_bilinear, resize_mask_nearest)

EVAL_MAX_DIM = 100
DEFAULT_THRESHOLD = 5.0
DEFAULT_ALPHAS = (0.05, 0.1, 0.15)
SWEEP_THRESHOLDS = tuple(range(1, 16))


@dataclass
class FlowAccuracyReport:
    threshold: float
    fraction: float
    pixel_count: int


@dataclass
class Keypoints:
    """Identity-ordered keypoint list with the object bounding box (h, w)."""

    xy: np.ndarray  # (N, 2)
    bbox_h: float
    bbox_w: float

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)


def endpoint_accuracy(flow: np.ndarray, gt_flow: np.ndarray,
                      fg_mask: np.ndarray,
                      threshold: float = DEFAULT_THRESHOLD) -> FlowAccuracyReport:
    """Fraction of foreground pixels whose endpoint error is strictly below
    the threshold, after rescaling so the larger image dimension is 100 px
    (flow vectors scaled by the same factor)."""
    flow = np.asarray(flow, dtype=np.float64)
    gt_flow = np.asarray(gt_flow, dtype=np.float64)
    fg_mask = np.asarray(fg_mask, dtype=bool)
    if flow.shape != gt_flow.shape or flow.shape[:2] != fg_mask.shape:
        raise ShapeError(
            f"shape mismatch: flow {flow.shape}, gt {gt_flow.shape}, "
            f"mask {fg_mask.shape}")
    if not fg_mask.any():
        raise ValueError("foreground mask is empty")
    h, w = flow.shape[:2]
    scale = EVAL_MAX_DIM / max(h, w)
    out_h = max(int(round(h * scale)), 1)
    out_w = max(int(round(w * scale)), 1)
    flow_r = resize_bilinear(flow, out_h, out_w) * scale
    gt_r = resize_bilinear(gt_flow, out_h, out_w) * scale
    mask_r = resize_mask_nearest(fg_mask, out_h, out_w)
    if not mask_r.any():
        raise ValueError("foreground mask is empty after resizing")
    err = np.linalg.norm(flow_r - gt_r, axis=2)
    count = int(mask_r.sum())
    correct = int(((err < threshold) & mask_r).sum())
    return FlowAccuracyReport(threshold, correct / count, count)


def accuracy_sweep(flow: np.ndarray, gt_flow: np.ndarray, fg_mask: np.ndarray,
                   thresholds=SWEEP_THRESHOLDS) -> list[FlowAccuracyReport]:
    return [endpoint_accuracy(flow, gt_flow, fg_mask, float(t))
            for t in thresholds]


def pck(warped_kps: Keypoints, gt_kps: Keypoints, alpha: float) -> float:
    """Fraction of keypoints within alpha * max(bbox_h, bbox_w) of ground
    truth; the bounding box is taken from the ground-truth keypoints."""
    if len(warped_kps.xy) != len(gt_kps.xy):
        raise ShapeError("keypoint lists must have equal length")
    if len(gt_kps.xy) == 0:
        raise ValueError("keypoint lists are empty")
    radius = alpha * max(gt_kps.bbox_h, gt_kps.bbox_w)
    d = np.linalg.norm(warped_kps.xy - gt_kps.xy, axis=1)
    return float((d <= radius).mean())


def warp_keypoints(field: AffineField, kps: Keypoints) -> Keypoints:
    """Map keypoints through the field, bilinearly interpolating the affine
    parameters between pixels."""
    out = np.array([apply_affine(field_at(field, x, y), (x, y))
                    for x, y in kps.xy])
    return Keypoints(out, kps.bbox_h, kps.bbox_w)


def mask_iou(warped_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    warped_mask = np.asarray(warped_mask, dtype=bool)
    gt_mask = np.asarray(gt_mask, dtype=bool)
    if warped_mask.shape != gt_mask.shape:
        raise ShapeError(
            f"mask shapes differ: {warped_mask.shape} vs {gt_mask.shape}")
    union = int((warped_mask | gt_mask).sum())
    if union == 0:
        raise ValueError("both masks are empty")
    inter = int((warped_mask & gt_mask).sum())
    return inter / union


def mean_endpoint_error(flow: np.ndarray, gt_flow: np.ndarray,
                        fg_mask: np.ndarray) -> float:
    """Mean endpoint error over the foreground at native resolution."""
    fg_mask = np.asarray(fg_mask, dtype=bool)
    if not fg_mask.any():
        raise ValueError("foreground mask is empty")
    err = np.linalg.norm(np.asarray(flow) - np.asarray(gt_flow), axis=2)
    return float(err[fg_mask].mean())
