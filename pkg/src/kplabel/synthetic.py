"""Fully ground-truthed synthetic worlds for oracle testing.

A world is an analytic object (box / cylinder / union of both) resting near
a table plane, observed by cameras orbiting it, one arc per scene. Depth is
rendered by exact ray-primitive intersection and quantized to 16-bit just
like real sensor exports; scripted clicks are projections of the true
keypoints with optional pixel and depth noise. Everything downstream of the
spec and seed is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset_io as dio
from .errors import SpecInvalid
from .geometry import CameraIntrinsics, RigidTransform, project


# --- primitives (object frame: z up, origin at object center) ---

@dataclass
class Box:
    size: np.ndarray                 # full extents (sx, sy, sz)
    center: np.ndarray = None

    def __post_init__(self):
        self.size = np.asarray(self.size, dtype=float)
        self.center = (np.zeros(3) if self.center is None
                       else np.asarray(self.center, dtype=float))

    def ray_hits(self, origins, dirs):
        """Smallest positive ray parameter per ray, inf where missed."""
        h = self.size / 2.0
        lo = self.center - h
        hi = self.center + h
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origins) / dirs
            t2 = (hi - origins) / dirs
        tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
        hit = (tmax >= tmin) & (tmax > 0)
        t = np.where(tmin > 0, tmin, tmax)
        return np.where(hit, t, np.inf)


@dataclass
class Cylinder:
    radius: float
    height: float
    center: np.ndarray = None

    def __post_init__(self):
        self.center = (np.zeros(3) if self.center is None
                       else np.asarray(self.center, dtype=float))

    def ray_hits(self, origins, dirs):
        o = origins - self.center
        d = dirs
        a = d[..., 0] ** 2 + d[..., 1] ** 2
        b = 2.0 * (o[..., 0] * d[..., 0] + o[..., 1] * d[..., 1])
        c = o[..., 0] ** 2 + o[..., 1] ** 2 - self.radius ** 2
        disc = b * b - 4 * a * c
        t_best = np.full(o.shape[:-1], np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            for sign in (-1.0, 1.0):
                t = (-b + sign * sq) / (2 * a)
                z = o[..., 2] + t * d[..., 2]
                ok = (disc >= 0) & (t > 0) & (np.abs(z) <= self.height / 2.0)
                t_best = np.where(ok & (t < t_best), t, t_best)
            for zcap in (-self.height / 2.0, self.height / 2.0):
                t = (zcap - o[..., 2]) / d[..., 2]
                x = o[..., 0] + t * d[..., 0]
                y = o[..., 1] + t * d[..., 1]
                ok = (t > 0) & (x * x + y * y <= self.radius ** 2)
                t_best = np.where(ok & (t < t_best), t, t_best)
        return t_best


def _box_keypoint_candidates(size):
    """Spaced surface landmarks, top-face-first so high-elevation cameras
    share them across all scenes."""
    hx, hy, hz = np.asarray(size, dtype=float) / 2.0
    top_corners = [(sx * hx, sy * hy, hz) for sx, sy in
                   ((1, 1), (-1, -1), (1, -1), (-1, 1))]
    top_center = [(0.0, 0.0, hz)]
    side_centers = [(hx, 0, 0), (-hx, 0, 0), (0, hy, 0), (0, -hy, 0)]
    bottom_corners = [(sx * hx, sy * hy, -hz) for sx, sy in
                      ((1, 1), (-1, -1), (1, -1), (-1, 1))]
    top_edges = [(hx, 0, hz), (-hx, 0, hz), (0, hy, hz), (0, -hy, hz)]
    return np.array(top_corners + top_center + side_centers
                    + bottom_corners + top_edges, dtype=float)


def _cylinder_keypoint_candidates(radius, height):
    h = height / 2.0
    pts = [(0, 0, h)]
    for ang in np.linspace(0, 2 * np.pi, 6, endpoint=False):
        pts.append((radius * np.cos(ang), radius * np.sin(ang), h))
    for ang in np.linspace(0, 2 * np.pi, 6, endpoint=False) + np.pi / 6:
        pts.append((radius * np.cos(ang), radius * np.sin(ang), 0.0))
    for ang in np.linspace(0, 2 * np.pi, 4, endpoint=False):
        pts.append((radius * np.cos(ang), radius * np.sin(ang), -h))
    return np.array(pts, dtype=float)


@dataclass
class WorldSpec:
    seed: int = 0
    object_type: str = "box"
    object_size: tuple = (0.20, 0.15, 0.12)     # box extents or (radius, height)
    object_elevation: float = 0.0               # gap between object and table
    n_keypoints: int = 9
    n_scenes: int = 3
    frames_per_scene: int = 8
    width: int = 320
    height: int = 240
    focal: float = 280.0
    depth_scale: float = 1000.0
    fps: float = 30.0
    camera_distance: float = 0.65
    camera_elevation_deg: float = 40.0
    scene_arc_deg: float = 50.0
    click_sigma_px: float = 0.0
    depth_sigma_m: float = 0.0
    render: bool = True
    cloud_stride: int = 2
    cloud_frames: int = 3
    annotation_frames: tuple = None             # defaults to (0, mid)

    def validate(self):
        if self.n_keypoints < 1 or self.n_scenes < 1 or self.frames_per_scene < 1:
            raise SpecInvalid("counts must be >= 1")
        if self.object_type not in ("box", "cylinder"):
            raise SpecInvalid(f"unknown object type {self.object_type!r}")
        if self.camera_distance <= 0:
            raise SpecInvalid("camera_distance must be positive")
        n_cand = len(self.keypoint_candidates())
        if self.n_keypoints > n_cand:
            raise SpecInvalid(f"at most {n_cand} keypoints for this object")

    def keypoint_candidates(self):
        if self.object_type == "box":
            return _box_keypoint_candidates(self.object_size)
        return _cylinder_keypoint_candidates(self.object_size[0], self.object_size[1])

    def primitives(self):
        if self.object_type == "box":
            return [Box(self.object_size)]
        return [Cylinder(self.object_size[0], self.object_size[1])]

    def table_z(self):
        half_height = (self.object_size[2] if self.object_type == "box"
                       else self.object_size[1]) / 2.0
        return -half_height - self.object_elevation

    def intrinsics(self):
        return CameraIntrinsics(self.focal, self.focal,
                                self.width / 2.0, self.height / 2.0,
                                self.width, self.height, self.depth_scale)

    def to_dict(self):
        d = {"schema_version": dio.SCHEMA_VERSION}
        for k, v in self.__dict__.items():
            d[k] = list(v) if isinstance(v, (tuple, np.ndarray)) else v
        return d

    @staticmethod
    def from_dict(doc):
        known = {f for f in WorldSpec.__dataclass_fields__}
        kwargs = {k: v for k, v in doc.items() if k in known}
        for k in ("object_size", "annotation_frames"):
            if kwargs.get(k) is not None:
                kwargs[k] = tuple(kwargs[k])
        spec = WorldSpec(**kwargs)
        spec.validate()
        return spec


def read_spec(path):
    return WorldSpec.from_dict(dio.read_json(path))


def write_spec(path, spec: WorldSpec):
    dio.write_json(path, spec.to_dict())


def _look_at(position, target):
    """Camera-to-world rotation with +z forward toward the target."""
    f = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    f = f / np.linalg.norm(f)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(f, up)
    n = np.linalg.norm(x)
    if n < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
    else:
        x = x / n
    y = np.cross(f, x)
    R = np.stack([x, y, f], axis=1)
    return RigidTransform.from_rotation(R, position)


@dataclass
class SyntheticWorld:
    spec: WorldSpec
    intrinsics: CameraIntrinsics
    keypoints_world: np.ndarray      # Q_true in F_w = scene 0's first camera
    transforms_true: list            # world -> scene first-camera frame
    camera_poses: list               # per scene: list of camera->world-G poses
    scenes: list                     # ArrayScene per scene (depth may be absent)
    annotations: "dio.AnnotationSet"
    clouds: list                     # per scene (points in F_s^(1), object tags) or None
    keypoints_object: np.ndarray     # same keypoints in the generator frame

    def trajectory(self, s):
        """C^(t) poses (camera t -> scene first camera) for one scene."""
        base_inv = self.camera_poses[s][0].inverse()
        return [base_inv @ P for P in self.camera_poses[s]]

    def gt_keypoint_frame_labels(self, s, t, occlusion=True):
        """(pixels (N_k, 2) with NaN when invisible, visibility bools)."""
        P = self.camera_poses[s][t]
        cam = P.inverse().apply(self._kp_G)
        intr = self.intrinsics
        px = np.full((len(cam), 2), np.nan)
        vis = np.zeros(len(cam), dtype=bool)
        for i, p in enumerate(cam):
            if p[2] <= 0:
                continue
            uv = project(intr, p)
            if not intr.contains(uv[0], uv[1]):
                continue
            if occlusion and not self._visible(P, p):
                continue
            px[i] = uv
            vis[i] = True
        return px, vis

    def gt_mask(self, s, t):
        _, _, mask = render_frame(self.spec, self.camera_poses[s][t])
        return mask

    # internals filled by generate()
    _kp_G: np.ndarray = None

    def _visible(self, cam_pose, p_cam):
        d_G = cam_pose.rotation_matrix() @ np.array([p_cam[0] / p_cam[2],
                                                     p_cam[1] / p_cam[2], 1.0])
        t_hit = _nearest_hit(self.spec, cam_pose.t[None, :], d_G[None, :])[0]
        return t_hit >= p_cam[2] - 1e-4


def _nearest_hit(spec, origins, dirs):
    """Smallest ray parameter against object primitives and the table plane."""
    t_min = np.full(origins.shape[:-1] if origins.shape != dirs.shape else dirs.shape[:-1],
                    np.inf)
    for prim in spec.primitives():
        t_min = np.minimum(t_min, prim.ray_hits(origins, dirs))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = (spec.table_z() - origins[..., 2]) / dirs[..., 2]
    t_plane = np.where(t_plane > 0, t_plane, np.inf)
    return np.minimum(t_min, t_plane)


def render_frame(spec: WorldSpec, cam_pose: RigidTransform):
    """Exact depth (meters, float), flat-shaded color, and object mask."""
    intr = spec.intrinsics()
    u = np.arange(intr.width)
    v = np.arange(intr.height)
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy,
                      np.ones_like(uu, dtype=float)], axis=-1)
    R = cam_pose.rotation_matrix()
    d_G = d_cam @ R.T
    o = np.broadcast_to(cam_pose.t, d_G.shape)
    t_obj = np.full(d_G.shape[:-1], np.inf)
    for prim in spec.primitives():
        t_obj = np.minimum(t_obj, prim.ray_hits(o, d_G))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = (spec.table_z() - cam_pose.t[2]) / d_G[..., 2]
    t_plane = np.where(t_plane > 0, t_plane, np.inf)
    t = np.minimum(t_obj, t_plane)
    depth = np.where(np.isfinite(t), t, 0.0)   # ray parameter equals camera z
    mask = t_obj < t_plane
    color = np.zeros(depth.shape + (3,), dtype=np.uint8)
    color[...] = (90, 90, 90)
    color[mask] = (200, 120, 40)
    color[depth == 0] = (20, 20, 30)
    return depth, color, mask


def quantize_depth(depth_m, depth_scale):
    raw = np.round(depth_m * depth_scale)
    return np.clip(raw, 0, 65535).astype(np.uint16)


def generate(spec: WorldSpec, out_dir=None) -> SyntheticWorld:
    """Build the world; optionally write a complete on-disk dataset."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    intr = spec.intrinsics()
    kp_G = spec.keypoint_candidates()[:spec.n_keypoints]

    # camera arcs: one azimuth sector per scene at a shared elevation
    elev = np.deg2rad(spec.camera_elevation_deg)
    camera_poses = []
    for s in range(spec.n_scenes):
        base_az = 2 * np.pi * s / spec.n_scenes
        arc = np.deg2rad(spec.scene_arc_deg)
        poses = []
        for t in range(spec.frames_per_scene):
            frac = t / max(spec.frames_per_scene - 1, 1)
            az = base_az + (frac - 0.5) * arc
            el = elev + np.deg2rad(6.0) * np.sin(2 * np.pi * frac)
            pos = spec.camera_distance * np.array([
                np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
            poses.append(_look_at(pos, (0.0, 0.0, 0.0)))
        camera_poses.append(poses)

    base0_inv = camera_poses[0][0].inverse()
    Q_true = base0_inv.apply(kp_G)
    transforms_true = [camera_poses[s][0].inverse() @ camera_poses[0][0]
                      for s in range(spec.n_scenes)]

    world = SyntheticWorld(spec, intr, Q_true, transforms_true, camera_poses,
                           [], None, [], kp_G)
    world._kp_G = kp_G

    # scripted clicks: each keypoint once per scene, at the first annotation
    # frame where it is visible
    ann_frames = spec.annotation_frames
    if ann_frames is None:
        ann_frames = (0, spec.frames_per_scene // 2)
    ann_frames = sorted({min(t, spec.frames_per_scene - 1) for t in ann_frames})
    scene_ids = [f"scene_{s:02d}" for s in range(spec.n_scenes)]
    entries = []
    for s in range(spec.n_scenes):
        clicked = set()
        for t in ann_frames:
            px, vis = world.gt_keypoint_frame_labels(s, t)
            for k in range(spec.n_keypoints):
                if k in clicked or not vis[k]:
                    continue
                u, v = px[k]
                if spec.click_sigma_px > 0:
                    u += rng.normal(0, spec.click_sigma_px)
                    v += rng.normal(0, spec.click_sigma_px)
                u = float(np.clip(u, 0, intr.width - 1e-3))
                v = float(np.clip(v, 0, intr.height - 1e-3))
                # depth the sensor would measure along the (possibly perturbed)
                # ray; rays grazing a silhouette edge fall back to the keypoint's
                # own depth, as a sensor smooths over the edge pixel
                P = camera_poses[s][t]
                z_kp = P.inverse().apply(kp_G[k])[2]
                d_G = P.rotation_matrix() @ np.array([(u - intr.cx) / intr.fx,
                                                      (v - intr.cy) / intr.fy, 1.0])
                z = _nearest_hit(spec, P.t[None, :], d_G[None, :])[0]
                if not np.isfinite(z) or abs(z - z_kp) > 0.02:
                    z = z_kp
                if spec.depth_sigma_m > 0:
                    z += rng.normal(0, spec.depth_sigma_m)
                entries.append(dio.AnnotationEntry(
                    scene_index=s, frame_index=t, keypoint_id=k, u=u, v=v,
                    depth_raw=float(z * spec.depth_scale)))
                clicked.add(k)
    names = [f"kp_{k}" for k in range(spec.n_keypoints)]
    world.annotations = dio.AnnotationSet("synthetic_object", names, scene_ids, entries)

    # rendered frames, in-memory scenes, and tagged scene clouds
    scenes = []
    clouds = [] if spec.render else None
    for s in range(spec.n_scenes):
        depth_frames, color_frames = [], []
        cloud_pts, cloud_tags = [], []
        traj = world.trajectory(s)
        if spec.render:
            cloud_every = max(1, spec.frames_per_scene // spec.cloud_frames)
            for t in range(spec.frames_per_scene):
                depth_m, color, obj_mask = render_frame(spec, camera_poses[s][t])
                if spec.depth_sigma_m > 0:
                    noise = rng.normal(0, spec.depth_sigma_m, depth_m.shape)
                    depth_m = np.where(depth_m > 0, np.maximum(depth_m + noise, 0.001),
                                       0.0)
                depth_raw = quantize_depth(depth_m, spec.depth_scale)
                depth_frames.append(depth_raw)
                color_frames.append(color)
                if t % cloud_every == 0:
                    st = spec.cloud_stride
                    zs = depth_raw[::st, ::st].astype(float) / spec.depth_scale
                    uu, vv = np.meshgrid(np.arange(0, intr.width, st),
                                         np.arange(0, intr.height, st))
                    ok = zs > 0
                    pts_cam = np.stack([(uu[ok] - intr.cx) * zs[ok] / intr.fx,
                                        (vv[ok] - intr.cy) * zs[ok] / intr.fy,
                                        zs[ok]], axis=1)
                    cloud_pts.append(traj[t].apply(pts_cam))
                    cloud_tags.append(obj_mask[::st, ::st][ok])
        scene = dio.ArrayScene(scene_ids[s], intr, traj,
                               depth_frames if spec.render else [None] * spec.frames_per_scene,
                               color_frames if spec.render else None, fps=spec.fps)
        scenes.append(scene)
        if spec.render:
            clouds.append((np.vstack(cloud_pts), np.concatenate(cloud_tags)))
    world.scenes = scenes
    world.clouds = clouds

    if out_dir is not None:
        _write_dataset(world, Path(out_dir))
    return world


def _write_dataset(world: SyntheticWorld, out: Path):
    spec = world.spec
    out.mkdir(parents=True, exist_ok=True)
    manifests = []
    for s, scene in enumerate(world.scenes):
        sdir = out / "scenes" / scene.scene_id
        (sdir / "color").mkdir(parents=True, exist_ok=True)
        (sdir / "depth").mkdir(parents=True, exist_ok=True)
        traj = world.trajectory(s)
        dio.write_trajectory(sdir / "trajectory.txt", traj,
                             stamps=[t / spec.fps for t in range(len(traj))])
        for t in range(scene.frame_count):
            if spec.render:
                dio.write_depth_png(sdir / "depth" / dio.frame_filename(t), scene.depth(t))
                dio.write_color_png(sdir / "color" / dio.frame_filename(t), scene.color(t))
        if spec.render and world.clouds[s] is not None:
            pts, tags = world.clouds[s]
            dio.write_ply(sdir / "cloud.ply", pts, extra_int=tags.astype(int),
                          extra_int_name="object_tag")
        manifest = dio.SceneManifest(scene.scene_id, "color", "depth",
                                     "trajectory.txt", world.intrinsics,
                                     scene.frame_count, spec.fps)
        dio.write_manifest(sdir / "manifest.json", manifest)
        manifests.append(f"scenes/{scene.scene_id}/manifest.json")

    dio.write_annotations(out / "annotations.json", world.annotations)
    # The rendered clouds are subsampled by cloud_stride, so the pixel
    # footprint on oblique surfaces exceeds the default growth radius; scale
    # the neighbor radius and dedup voxel to the actual sampling density.
    # The fused model is then dense at pixel level, so splatting during mask
    # rendering would only inflate the silhouette.
    footprint = spec.camera_distance / spec.focal
    config = dio.ProjectConfig(
        object_name="synthetic_object",
        keypoint_names=world.annotations.keypoint_names,
        scene_manifests=manifests, output_dir="output",
        growth={"neighbor_radius": round(2.5 * spec.cloud_stride * footprint, 4),
                "voxel_size": round(max(footprint, 0.001), 4)},
        label={"splat_radius": 0})
    dio.write_project(out / "project.json", config)
    write_spec(out / "world_spec.json", spec)

    gt = out / "gt"
    gt.mkdir(exist_ok=True)
    from .solver import SparseSolution
    sol = SparseSolution(world.keypoints_world, world.transforms_true, {}, True, 0)
    dio.write_sparse_model(gt / "sparse_model.json", sol, "synthetic_object",
                           world.annotations.keypoint_names,
                           [s.scene_id for s in world.scenes])
    if spec.render:
        from .labeling import KeypointLabel, LabelRecord, bbox_label, LabelParams
        masks_dir = gt / "masks"
        for s, scene in enumerate(world.scenes):
            records = []
            for t in range(scene.frame_count):
                px, vis = world.gt_keypoint_frame_labels(s, t)
                kps = [KeypointLabel((float(px[i, 0]), float(px[i, 1])), True)
                       if vis[i] else KeypointLabel(None, False)
                       for i in range(len(vis))]
                mask = world.gt_mask(s, t)
                bbox = None
                if mask.any():
                    bbox = bbox_label(mask=mask, params=LabelParams())
                records.append(LabelRecord(scene.scene_id, t, kps, mask, bbox))
            dio.write_labels(gt / f"labels_{scene.scene_id}.jsonl", masks_dir,
                             records, scene.scene_id)
