"""Pinhole camera model, rigid-transform algebra, and pixel <-> 3D lifting.

All functions are pure and operate on immutable values; depth images are
16-bit single-channel arrays in units of 1/depth_scale meters with 0 marking
invalid depth. Quaternions are stored (w, x, y, z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, InvalidDepth, OutOfBounds

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters of the (pre-registered) RGB-D sensor."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 1000.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")

    def contains(self, u, v):
        return 0 <= u < self.width and 0 <= v < self.height


def _normalize_quat(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("zero quaternion")
    return q / n


def quat_to_matrix(q):
    """3x3 rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Unit quaternion (w, x, y, z) of a rotation matrix, scalar part >= 0."""
    R = np.asarray(R, dtype=float)
    # Shepperd's method: branch on the largest diagonal combination.
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    q = _normalize_quat(q)
    if q[0] < 0:
        q = -q
    return q


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion, w-first) followed by translation, meters."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _normalize_quat(self.q))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @staticmethod
    def identity():
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(M):
        M = np.asarray(M, dtype=float)
        return RigidTransform(matrix_to_quat(M[:3, :3]), M[:3, 3])

    @staticmethod
    def from_rotation(R, t):
        return RigidTransform(matrix_to_quat(R), t)

    def rotation_matrix(self):
        return quat_to_matrix(self.q)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.t
        return M

    def apply(self, p):
        """Rotate then translate one point (3,) or a stack (N, 3)."""
        p = np.asarray(p, dtype=float)
        return p @ self.rotation_matrix().T + self.t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self @ other).apply(p) == self.apply(other.apply(p))."""
        return RigidTransform(quat_multiply(self.q, other.q),
                              self.apply(other.t))

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        qc = np.array([self.q[0], -self.q[1], -self.q[2], -self.q[3]])
        return RigidTransform(qc, -(quat_to_matrix(qc) @ self.t))


def backproject(intr: CameraIntrinsics, px, depth_raw) -> np.ndarray:
    """Pixel + raw depth sample -> 3D point in the camera frame (meters)."""
    u, v = float(px[0]), float(px[1])
    if not intr.contains(u, v):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
    if depth_raw <= 0:
        raise InvalidDepth(f"invalid depth at pixel ({u}, {v})")
    z = float(depth_raw) / intr.depth_scale
    return np.array([(u - intr.cx) * z / intr.fx,
                     (v - intr.cy) * z / intr.fy,
                     z])


def project(intr: CameraIntrinsics, p) -> np.ndarray:
    """Camera-frame point -> continuous pixel; may land outside the image."""
    p = np.asarray(p, dtype=float)
    if p[2] <= 0:
        raise BehindCamera(f"point with z={p[2]} is not projectable")
    return np.array([intr.fx * p[0] / p[2] + intr.cx,
                     intr.fy * p[1] / p[2] + intr.cy])


def project_many(intr: CameraIntrinsics, pts):
    """Vectorized projection; rows with z <= 0 come back as NaN."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    out = np.full((len(pts), 2), np.nan)
    ok = pts[:, 2] > 0
    z = pts[ok, 2]
    out[ok, 0] = intr.fx * pts[ok, 0] / z + intr.cx
    out[ok, 1] = intr.fy * pts[ok, 1] / z + intr.cy
    return out


def depth_at(intr: CameraIntrinsics, depth_image, px, window=5):
    """Raw depth at a (continuous) pixel, with nearest-valid fallback.

    Scans a window x window neighborhood around the rounded pixel; among valid
    samples picks minimal pixel distance to the click, ties broken by minimal
    depth. Raises InvalidDepth when the whole window is holes.
    """
    u, v = float(px[0]), float(px[1])
    if not intr.contains(u, v):
        raise OutOfBounds(f"pixel ({u}, {v}) outside image")
    iu, iv = int(round(u)), int(round(v))
    iu = min(max(iu, 0), intr.width - 1)
    iv = min(max(iv, 0), intr.height - 1)
    half = window // 2
    best = None  # (pixel_dist2, depth, uu, vv)
    for dv in range(-half, half + 1):
        for du in range(-half, half + 1):
            uu, vv = iu + du, iv + dv
            if not (0 <= uu < intr.width and 0 <= vv < intr.height):
                continue
            d = int(depth_image[vv, uu])
            if d <= 0:
                continue
            key = ((uu - u) ** 2 + (vv - v) ** 2, d)
            if best is None or key < best[:2]:
                best = (key[0], d, uu, vv)
    if best is None:
        raise InvalidDepth(f"no valid depth within {window}x{window} window at ({u}, {v})")
    return best[1], (best[2], best[3])


def lift_annotation(scene, frame_index, px, depth_raw=None):
    """Annotated pixel -> 3D point expressed at the scene's first camera pose.

    Back-projects the click with the frame's depth and maps it with the frame's
    camera pose. A depth sample captured at click time (raw units, may be
    fractional) takes precedence over the stored depth image; otherwise the
    nearest valid depth in a 5x5 window around the click is used.
    """
    intr = scene.intrinsics
    if depth_raw is None:
        depth_raw, _ = depth_at(intr, scene.depth(frame_index), px)
    p_cam = backproject(intr, px, depth_raw)
    return scene.pose(frame_index).apply(p_cam)
