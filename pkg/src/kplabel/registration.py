"""Closed-form absolute orientation and new-scene registration.

Horn's quaternion formulation: the optimal rotation is the eigenvector of a
4x4 symmetric matrix built from the cross-covariance of the centered point
sets, taken at the largest eigenvalue. No scale is estimated. The recovered
quaternion is canonicalized to a nonnegative scalar part.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Degenerate, InvalidDepth, LengthMismatch, TooFewPoints
from .geometry import RigidTransform, lift_annotation


def horn_align(src, dst) -> RigidTransform:
    """Least-squares rigid map minimizing sum ||T(src_i) - dst_i||^2."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if len(src) != len(dst):
        raise LengthMismatch(f"{len(src)} source vs {len(dst)} destination points")
    if len(src) < 3:
        raise TooFewPoints(f"need >= 3 correspondences, got {len(src)}")
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    a = src - c_src
    b = dst - c_dst
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] < 1e-9:
        raise Degenerate("source points are collinear or coincident")

    M = a.T @ b  # cross-covariance
    sxx, sxy, sxz = M[0]
    syx, syy, syz = M[1]
    szx, szy, szz = M[2]
    N = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    eigvals, eigvecs = np.linalg.eigh(N)
    q = eigvecs[:, -1]
    if q[0] < 0 or (q[0] == 0 and q[np.argmax(np.abs(q))] < 0):
        q = -q
    T_rot = RigidTransform(q, np.zeros(3))
    t = c_dst - T_rot.apply(c_src)
    return RigidTransform(q, t)


@dataclass
class RegistrationResult:
    transform: RigidTransform        # world -> new scene's first-camera frame
    keypoint_ids: list
    residuals: np.ndarray            # (N, 3) per-correspondence errors
    lift_failures: list = field(default_factory=list)

    @property
    def rms_residual(self):
        return float(np.sqrt(np.mean(np.sum(self.residuals ** 2, axis=1))))


def register_new_scene(keypoints, annotations, scene) -> RegistrationResult:
    """Register an out-of-dataset scene against a solved sparse model.

    Lifts the new scene's clicks to its first-camera frame and aligns the
    matching model keypoints onto them; all provided correspondences are
    used. Outliers show up in the residual report, they are not rejected.
    """
    keypoints = np.asarray(keypoints, dtype=float)
    lifted, ids, failures = [], [], []
    seen = {}
    for entry in annotations.entries:
        if not (0 <= entry.keypoint_id < len(keypoints)):
            raise ValueError(f"keypoint id {entry.keypoint_id} not in model")
        try:
            p = lift_annotation(scene, entry.frame_index, (entry.u, entry.v),
                                entry.depth_raw)
        except InvalidDepth as exc:
            failures.append((entry.frame_index, entry.keypoint_id, str(exc)))
            continue
        seen[entry.keypoint_id] = p  # later clicks overwrite
    ids = sorted(seen)
    if len(ids) < 3:
        raise TooFewPoints(f"only {len(ids)} keypoints lifted with valid depth")
    lifted = np.array([seen[k] for k in ids])
    T = horn_align(keypoints[ids], lifted)
    residuals = T.apply(keypoints[ids]) - lifted
    return RegistrationResult(T, ids, residuals, failures)
