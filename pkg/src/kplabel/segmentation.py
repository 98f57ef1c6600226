"""Seeded region growing over scene point clouds and dense-model fusion.

Growth starts from cloud points within an attachment radius of any sparse
keypoint and spreads breadth-first: a neighbor joins when it lies within the
neighbor radius of an accepted point and their normals agree within the
smoothness angle. High-curvature points (creases, object/support contact)
may join a region but do not propagate it further, which stops the front
from walking through the contact band onto the supporting surface. The
per-scene regions are mapped to the world frame and thinned so no two
surviving points are closer than half the voxel size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyModel, NoSeedAttached


@dataclass
class GrowthParams:
    neighbor_radius: float = 0.008       # meters
    smoothness_angle: float = np.deg2rad(25.0)
    max_seed_distance: float = 0.015     # meters
    min_region_size: int = 1
    curvature_threshold: float = 0.01    # surface variation, dimensionless

    def __post_init__(self):
        for name in ("neighbor_radius", "smoothness_angle",
                     "max_seed_distance", "min_region_size",
                     "curvature_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass
class ScenePointCloud:
    points: np.ndarray               # (N, 3), scene first-camera frame
    normals: np.ndarray = None       # (N, 3) unit vectors
    curvature: np.ndarray = None     # (N,) surface variation in [0, 1/3]
    colors: np.ndarray = None        # optional (N, 3) uint8

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite point coordinates")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)


def estimate_normals(points, k=16, viewpoint=(0.0, 0.0, 0.0)):
    """PCA normals over k nearest neighbors, oriented toward the viewpoint.

    Returns (normals, curvature) where curvature is the surface variation
    lambda_0 / (lambda_0 + lambda_1 + lambda_2); 0 on a plane, up to 1/3
    for an isotropic neighborhood.
    """
    points = np.asarray(points, dtype=float)
    tree = cKDTree(points)
    k = min(k, len(points))
    _, idx = tree.query(points, k=k)
    if k == 1:
        idx = idx[:, None]
    nb = points[idx]                                   # (N, k, 3)
    c = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", c, c)
    vals, vecs = np.linalg.eigh(cov)                   # batched 3x3
    normals = vecs[:, :, 0]
    flip = np.einsum("ni,ni->n", np.asarray(viewpoint, dtype=float) - points,
                     normals) < 0
    normals[flip] *= -1.0
    total = vals.sum(axis=1)
    curvature = np.divide(vals[:, 0], total, out=np.zeros(len(points)),
                          where=total > 0)
    return normals, curvature


def grow_region(cloud: ScenePointCloud, seeds, params: GrowthParams = None,
                viewpoint=(0.0, 0.0, 0.0)):
    """Indices of cloud points connected to the seeds, union over all seeds.

    Deterministic for fixed inputs; independent of seed ordering because the
    frontier is processed in ascending index order.
    """
    params = params or GrowthParams()
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 3)
    normals, curvature = cloud.normals, cloud.curvature
    if normals is None:
        normals, curvature = estimate_normals(cloud.points, viewpoint=viewpoint)
    if curvature is None:
        curvature = np.zeros(len(cloud.points))
    tree = cKDTree(cloud.points)

    attached = set()
    for s in seeds:
        attached.update(tree.query_ball_point(s, params.max_seed_distance))
    if not attached:
        raise NoSeedAttached(
            f"no cloud point within {params.max_seed_distance} m of any seed")

    cos_tol = np.cos(params.smoothness_angle)
    accepted = set(attached)
    frontier = sorted(attached)
    while frontier:
        next_frontier = set()
        for i in frontier:
            if curvature[i] > params.curvature_threshold:
                continue
            for j in tree.query_ball_point(cloud.points[i], params.neighbor_radius):
                if j in accepted:
                    continue
                if abs(np.dot(normals[i], normals[j])) >= cos_tol:
                    accepted.add(j)
                    next_frontier.add(j)
        frontier = sorted(next_frontier)
    out = np.array(sorted(accepted), dtype=int)
    if len(out) < params.min_region_size:
        return np.array([], dtype=int)
    return out


@dataclass
class DenseModel:
    points: np.ndarray          # (N, 3), world frame
    source_scene: np.ndarray    # (N,) int scene index per point

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.source_scene = np.asarray(self.source_scene, dtype=int).reshape(-1)


def _thin(points, min_dist):
    """Greedy thinning in input order: keep a point iff no kept point lies
    within min_dist. Grid-hash accelerated, exact radius semantics."""
    if len(points) == 0:
        return np.array([], dtype=int)
    cell = min_dist
    grid = {}
    kept = []
    keys = np.floor(points / cell).astype(np.int64)
    for i in range(len(points)):
        kx, ky, kz = keys[i]
        ok = True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    for j in grid.get((kx + dx, ky + dy, kz + dz), ()):
                        d = points[i] - points[j]
                        if d @ d < min_dist * min_dist:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            kept.append(i)
            grid.setdefault((kx, ky, kz), []).append(i)
    return np.array(kept, dtype=int)


def fuse(regions, transforms, voxel_size=0.003) -> DenseModel:
    """Map per-scene regions into the world frame and deduplicate.

    `regions[s]` holds the selected points in scene s's first-camera frame
    (may be empty); `transforms[s]` is the world->scene map, so points travel
    through its inverse. Sequential reduction over scene order, deterministic.
    """
    pts, src = [], []
    for s, region in enumerate(regions):
        region = np.asarray(region, dtype=float).reshape(-1, 3)
        if len(region) == 0:
            continue
        world = transforms[s].inverse().apply(region)
        pts.append(world)
        src.append(np.full(len(world), s, dtype=int))
    if not pts:
        raise EmptyModel("all per-scene regions are empty")
    points = np.vstack(pts)
    source = np.concatenate(src)
    keep = _thin(points, voxel_size / 2.0)
    return DenseModel(points[keep], source[keep])


@dataclass
class SphereCrop:
    center: np.ndarray
    radius: float


@dataclass
class BoxCrop:
    minimum: np.ndarray
    maximum: np.ndarray


def crop(model: DenseModel, region) -> DenseModel:
    """Keep only model points inside the sphere or axis-aligned box."""
    if isinstance(region, SphereCrop):
        d = model.points - np.asarray(region.center, dtype=float)
        mask = np.sum(d * d, axis=1) <= region.radius ** 2
    elif isinstance(region, BoxCrop):
        lo = np.asarray(region.minimum, dtype=float)
        hi = np.asarray(region.maximum, dtype=float)
        mask = np.all((model.points >= lo) & (model.points <= hi), axis=1)
    else:
        raise ValueError(f"unsupported crop region {type(region).__name__}")
    return DenseModel(model.points[mask], model.source_scene[mask])
