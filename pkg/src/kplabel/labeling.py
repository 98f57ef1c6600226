"""Back-projection of the sparse and dense models into every frame.

A model point travels world -> scene first-camera frame (scene transform)
-> frame camera (inverse of the per-frame camera pose) -> pixel. Keypoint
visibility and mask membership are gated by an occlusion test against the
frame's measured depth with tolerance delta; invalid depth counts as
visible so that sensor holes do not punch holes into the labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptyModel, NothingToBound
from .geometry import CameraIntrinsics, project_many


@dataclass
class LabelParams:
    occlusion_tolerance: float = 0.015   # meters
    splat_radius: int = 2                # pixels
    closing_kernel: int = 5              # pixels, square
    min_bbox_side: float = 32.0          # pixels
    bbox_scale: float = 1.5


@dataclass
class KeypointLabel:
    pixel: tuple          # (u, v) or None when not visible
    visible: bool


@dataclass
class LabelRecord:
    scene_id: str
    frame_index: int
    keypoints: list               # N_k KeypointLabel entries
    mask: np.ndarray = None       # bool (H, W) or None when no dense model
    bbox: tuple = None            # (center_u, center_v, side) or None


def _measured_depth(depth_image, intr, px):
    u, v = int(round(px[0])), int(round(px[1]))
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        return 0.0
    return float(depth_image[v, u]) / intr.depth_scale


def keypoint_labels(keypoints, scene_transform, camera_pose, intr: CameraIntrinsics,
                    depth_image=None, params: LabelParams = None):
    """Project each model keypoint into one frame.

    Visibility requires positive camera-frame depth, an in-bounds pixel, and
    passing the occlusion test when a depth frame is supplied.
    """
    params = params or LabelParams()
    cam_from_world = camera_pose.inverse() @ scene_transform
    pts = cam_from_world.apply(np.asarray(keypoints, dtype=float))
    px = project_many(intr, pts)
    labels = []
    for i in range(len(pts)):
        z = pts[i, 2]
        if z <= 0 or not np.isfinite(px[i]).all() or not intr.contains(px[i, 0], px[i, 1]):
            labels.append(KeypointLabel(None, False))
            continue
        if depth_image is not None:
            measured = _measured_depth(depth_image, intr, px[i])
            if measured > 0 and measured < z - params.occlusion_tolerance:
                labels.append(KeypointLabel(None, False))
                continue
        labels.append(KeypointLabel((float(px[i, 0]), float(px[i, 1])), True))
    return labels


def mask_label(dense_points, scene_transform, camera_pose, intr: CameraIntrinsics,
               depth_image=None, params: LabelParams = None):
    """Rasterize the dense model into a binary mask for one frame."""
    params = params or LabelParams()
    dense_points = np.asarray(dense_points, dtype=float).reshape(-1, 3)
    if len(dense_points) == 0:
        raise EmptyModel("dense model has no points")
    cam_from_world = camera_pose.inverse() @ scene_transform
    pts = cam_from_world.apply(dense_points)
    mask = np.zeros((intr.height, intr.width), dtype=bool)
    front = pts[:, 2] > 0
    pts = pts[front]
    if len(pts) == 0:
        return mask
    px = project_many(intr, pts)
    u = np.round(px[:, 0]).astype(int)
    v = np.round(px[:, 1]).astype(int)
    inb = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    u, v, z = u[inb], v[inb], pts[inb, 2]
    if depth_image is not None and np.isfinite(params.occlusion_tolerance):
        measured = depth_image[v, u].astype(float) / intr.depth_scale
        ok = (measured <= 0) | (z <= measured + params.occlusion_tolerance)
        u, v = u[ok], v[ok]
    if len(u) == 0:
        return mask
    r = int(params.splat_radius)
    if r <= 0:
        mask[v, u] = True
    else:
        offsets = [(du, dv) for dv in range(-r, r + 1) for du in range(-r, r + 1)
                   if du * du + dv * dv <= r * r]
        for du, dv in offsets:
            uu = np.clip(u + du, 0, intr.width - 1)
            vv = np.clip(v + dv, 0, intr.height - 1)
            mask[vv, uu] = True
    k = int(params.closing_kernel)
    if k > 1:
        # pad so closing does not erode at the image border
        padded = np.pad(mask, k, mode="constant")
        closed = ndimage.binary_closing(padded, structure=np.ones((k, k), dtype=bool))
        mask = closed[k:-k, k:-k]
    return mask


def bbox_label(keypoints=None, mask=None, params: LabelParams = None):
    """Upright square bounding box (center_u, center_v, side).

    Mask mode bounds the mask tightly with side = max extent and no scaling;
    keypoint mode bounds the visible keypoints and scales the side by 1.5,
    center preserved. Degenerate extents fall back to the minimum side.
    """
    params = params or LabelParams()
    if mask is not None and np.any(mask):
        vs, us = np.nonzero(mask)
        cu = (us.min() + us.max()) / 2.0
        cv = (vs.min() + vs.max()) / 2.0
        side = float(max(us.max() - us.min(), vs.max() - vs.min()))
        if side < 1.0:
            side = params.min_bbox_side
        return (float(cu), float(cv), side)
    if keypoints is not None:
        pts = np.array([kp.pixel for kp in keypoints if kp.visible], dtype=float)
        if len(pts) > 0:
            lo = pts.min(axis=0)
            hi = pts.max(axis=0)
            center = (lo + hi) / 2.0
            side = params.bbox_scale * float(max(hi[0] - lo[0], hi[1] - lo[1]))
            if side < 1.0:
                side = params.min_bbox_side
            return (float(center[0]), float(center[1]), side)
    raise NothingToBound("no visible keypoint and no mask pixel")


def frame_stride(fps, sample_hz):
    """Stride between labeled frames; sample_hz <= 0 labels every frame."""
    if sample_hz <= 0:
        return 1
    return max(1, int(round(fps / sample_hz)))


def label_dataset(solution, scenes, dense_points=None, sample_hz=0.0,
                  params: LabelParams = None, use_depth=True):
    """Yield one LabelRecord per sampled frame over all scenes.

    Output order is (scene, frame) regardless of how callers parallelize;
    per-frame failures are reported on the record stream, not raised.
    """
    params = params or LabelParams()
    for s, scene in enumerate(scenes):
        stride = frame_stride(scene.fps, sample_hz)
        T_s = solution.transforms[s]
        for t in range(0, scene.frame_count, stride):
            depth = scene.depth(t) if use_depth else None
            kps = keypoint_labels(solution.keypoints, T_s, scene.pose(t),
                                  scene.intrinsics, depth, params)
            mask = None
            if dense_points is not None and len(dense_points) > 0:
                mask = mask_label(dense_points, T_s, scene.pose(t),
                                  scene.intrinsics, depth, params)
            try:
                if mask is not None and np.any(mask):
                    bbox = bbox_label(mask=mask, params=params)
                else:
                    bbox = bbox_label(keypoints=kps, params=params)
            except NothingToBound:
                bbox = None
            yield LabelRecord(scene.scene_id, t, kps, mask, bbox)
