"""Label and model accuracy metrics against oracle ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyComparison, LengthMismatch
from .geometry import matrix_to_quat
from .registration import horn_align


@dataclass
class MetricReport:
    mean_3d_error_mm: float = None
    median_3d_error_mm: float = None
    mean_2d_error_px: float = None
    mean_iou: float = None
    rotation_error_rad: float = None
    rotation_error_deg: float = None
    translation_error_mm: float = None
    sample_counts: dict = field(default_factory=dict)
    gauge_aligned: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mean_3d_error_mm": self.mean_3d_error_mm,
            "median_3d_error_mm": self.median_3d_error_mm,
            "mean_2d_error_px": self.mean_2d_error_px,
            "mean_iou": self.mean_iou,
            "rotation_error_rad": self.rotation_error_rad,
            "rotation_error_deg": self.rotation_error_deg,
            "translation_error_mm": self.translation_error_mm,
            "sample_counts": self.sample_counts,
            "gauge_aligned": self.gauge_aligned,
            "notes": self.notes,
        }


def keypoint_error_2d(pred, gt):
    """Mean Euclidean pixel distance over mutually visible keypoints."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    gt = np.asarray(gt, dtype=float).reshape(-1, 2)
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predicted vs {len(gt)} ground-truth pixels")
    if len(pred) == 0:
        raise EmptyComparison("no mutually visible keypoints to compare")
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def iou(mask_a, mask_b):
    """|A ∩ B| / |A ∪ B|; two empty masks compare as 1.0."""
    mask_a = np.asarray(mask_a, dtype=bool)
    mask_b = np.asarray(mask_b, dtype=bool)
    if mask_a.shape != mask_b.shape:
        raise DimensionMismatch(f"mask shapes {mask_a.shape} vs {mask_b.shape}")
    union = np.count_nonzero(mask_a | mask_b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(mask_a & mask_b) / union)


def rotation_geodesic(R1, R2):
    """Axis-angle magnitude of the relative rotation R1^T R2, radians.

    Computed through a quaternion conversion, which stays well conditioned
    near pi where the matrix-log trace formula degrades.
    """
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    q = matrix_to_quat(R1.T @ R2)
    return float(2.0 * np.arctan2(np.linalg.norm(q[1:]), abs(q[0])))


def sparse_model_error(pred, gt, gauge_align=True):
    """Mean 3D distance (mm) between corresponded keypoints.

    With gauge_align the prediction is first mapped onto the ground truth by
    a closed-form rigid alignment, removing the free world-frame choice.
    Returns (mean_mm, aligned_prediction).
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predicted vs {len(gt)} ground-truth points")
    if len(pred) == 0:
        raise EmptyComparison("no corresponded points")
    aligned = pred
    if gauge_align and len(pred) >= 3:
        aligned = horn_align(pred, gt).apply(pred)
    err = np.linalg.norm(aligned - gt, axis=1)
    return float(np.mean(err) * 1000.0), aligned
