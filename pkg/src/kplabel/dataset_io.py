"""Every on-disk format: scene directories, trajectories, annotations,
models, labels, configs. See docs/formats.md for the field tables.

All JSON documents carry "schema_version"; readers tolerate unknown fields
and reject unknown versions. Writers go through a temp-file-then-rename so
concurrent readers never see partial files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (MalformedRow, MissingFile, SchemaVersionUnsupported,
                     TrajectoryLengthMismatch, ValidationError)
from .geometry import CameraIntrinsics, RigidTransform

SCHEMA_VERSION = 1


def _check_version(doc, path):
    v = doc.get("schema_version")
    if v != SCHEMA_VERSION:
        raise SchemaVersionUnsupported(f"{path}: schema_version {v!r}, expected {SCHEMA_VERSION}")


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc):
    atomic_write_bytes(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with open(path) as f:
        return json.load(f)


# --- camera intrinsics ---

def intrinsics_to_dict(intr: CameraIntrinsics):
    return {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height,
            "depth_scale": intr.depth_scale}


def intrinsics_from_dict(d, path="intrinsics"):
    try:
        return CameraIntrinsics(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                                width=int(d["width"]), height=int(d["height"]),
                                depth_scale=d.get("depth_scale", 1000.0))
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}", path=path)


# --- trajectories (timestamp tx ty tz qx qy qz qw per line) ---

def read_trajectory(path):
    """Parse a trajectory file into per-frame camera poses C^(t).

    Disk quaternion order is (qx qy qz qw); internal order is (w, x, y, z).
    The first pose is forced to the identity by left-composing with its
    inverse, which preserves all relative poses.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    poses, stamps = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise MalformedRow(f"{path}:{lineno}: expected 8 columns, got {len(parts)}",
                                   line_number=lineno)
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise MalformedRow(f"{path}:{lineno}: non-numeric field", line_number=lineno)
            stamps.append(vals[0])
            tx, ty, tz, qx, qy, qz, qw = vals[1:]
            poses.append(RigidTransform(np.array([qw, qx, qy, qz]),
                                        np.array([tx, ty, tz])))
    if poses:
        gauge = poses[0].inverse()
        poses = [gauge @ p for p in poses]
    return poses, stamps


def write_trajectory(path, poses, stamps=None):
    lines = []
    for i, p in enumerate(poses):
        ts = stamps[i] if stamps is not None else float(i)
        w, x, y, z = p.q
        tx, ty, tz = p.t
        fields = [f"{ts:.6f}"] + [f"{v:.17g}" for v in (tx, ty, tz, x, y, z, w)]
        lines.append(" ".join(fields))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


# --- images ---

def write_depth_png(path, depth):
    depth = np.asarray(depth)
    if depth.dtype != np.uint16:
        raise ValueError("depth image must be uint16")
    img = Image.fromarray(depth)  # uint16 -> 16-bit grayscale PNG
    buf = _image_bytes(img)
    atomic_write_bytes(path, buf)


def read_depth_png(path):
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    img = Image.open(path)
    return np.array(img, dtype=np.uint16)


def write_color_png(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    atomic_write_bytes(path, _image_bytes(Image.fromarray(rgb, mode="RGB")))


def read_color_png(path):
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    return np.array(Image.open(path).convert("RGB"))


def write_mask_png(path, mask):
    img = Image.fromarray(np.asarray(mask, dtype=bool)).convert("1")
    atomic_write_bytes(path, _image_bytes(img))


def read_mask_png(path):
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    return np.array(Image.open(path).convert("1"), dtype=bool)


def _image_bytes(img):
    import io
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def frame_filename(index, ext="png"):
    return f"{index:06d}.{ext}"


# --- scenes ---

@dataclass
class SceneManifest:
    scene_id: str
    color_dir: str
    depth_dir: str
    trajectory: str
    intrinsics: CameraIntrinsics
    frame_count: int
    fps: float = 30.0

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "scene_id": self.scene_id,
                "color_dir": self.color_dir, "depth_dir": self.depth_dir,
                "trajectory": self.trajectory,
                "intrinsics": intrinsics_to_dict(self.intrinsics),
                "frame_count": self.frame_count, "fps": self.fps}


def write_manifest(path, manifest: SceneManifest):
    write_json(path, manifest.to_dict())


def read_manifest(path):
    doc = read_json(path)
    _check_version(doc, path)
    try:
        return SceneManifest(
            scene_id=doc["scene_id"], color_dir=doc["color_dir"],
            depth_dir=doc["depth_dir"], trajectory=doc["trajectory"],
            intrinsics=intrinsics_from_dict(doc["intrinsics"], f"{path}:intrinsics"),
            frame_count=int(doc["frame_count"]), fps=float(doc.get("fps", 30.0)))
    except KeyError as exc:
        raise ValidationError(f"{path}: missing field {exc}", path=str(path))


class Scene:
    """Disk-backed scene: lazily loaded frames, eagerly parsed poses."""

    def __init__(self, manifest: SceneManifest, root="."):
        root = Path(root)
        self.scene_id = manifest.scene_id
        self.intrinsics = manifest.intrinsics
        self.fps = manifest.fps
        self.frame_count = manifest.frame_count
        self._color_dir = root / manifest.color_dir
        self._depth_dir = root / manifest.depth_dir
        poses, stamps = read_trajectory(root / manifest.trajectory)
        if len(poses) != manifest.frame_count:
            raise TrajectoryLengthMismatch(
                f"{manifest.trajectory}: {len(poses)} rows for "
                f"{manifest.frame_count} frames")
        self._poses = poses
        self.timestamps = stamps

    def pose(self, t) -> RigidTransform:
        return self._poses[t]

    def depth(self, t):
        return read_depth_png(self._depth_dir / frame_filename(t))

    def color(self, t):
        return read_color_png(self._color_dir / frame_filename(t))

    def color_path(self, t):
        return self._color_dir / frame_filename(t)


class ArrayScene:
    """In-memory scene used by the synthetic oracle and tests."""

    def __init__(self, scene_id, intrinsics, poses, depth_frames,
                 color_frames=None, fps=30.0):
        self.scene_id = scene_id
        self.intrinsics = intrinsics
        self._poses = list(poses)
        self._depth = list(depth_frames)
        self._color = list(color_frames) if color_frames is not None else None
        self.fps = fps
        self.frame_count = len(self._poses)

    def pose(self, t):
        return self._poses[t]

    def depth(self, t):
        return self._depth[t]

    def color(self, t):
        if self._color is None:
            raise MissingFile(f"scene {self.scene_id} has no color frames")
        return self._color[t]


def load_scene(manifest_path):
    """Manifest file -> Scene with directories resolved against the manifest."""
    manifest = read_manifest(manifest_path)
    return Scene(manifest, root=Path(manifest_path).parent)


# --- annotations ---

@dataclass
class AnnotationEntry:
    scene_index: int
    frame_index: int
    keypoint_id: int
    u: float
    v: float
    depth_raw: float = None   # optional depth sample captured at click time
    timestamp: float = None
    author: str = None


@dataclass
class AnnotationSet:
    object_name: str
    keypoint_names: list
    scene_ids: list
    entries: list = field(default_factory=list)

    @property
    def n_keypoints(self):
        return len(self.keypoint_names)

    def to_dict(self):
        entries = []
        for e in self.entries:
            d = {"scene": self.scene_ids[e.scene_index], "frame": e.frame_index,
                 "keypoint": e.keypoint_id, "u": e.u, "v": e.v}
            if e.depth_raw is not None:
                d["depth_raw"] = e.depth_raw
            if e.timestamp is not None:
                d["timestamp"] = e.timestamp
            if e.author is not None:
                d["author"] = e.author
            entries.append(d)
        return {"schema_version": SCHEMA_VERSION, "object_name": self.object_name,
                "keypoint_names": list(self.keypoint_names),
                "scenes": list(self.scene_ids), "entries": entries}


def write_annotations(path, annotations: AnnotationSet):
    write_json(path, annotations.to_dict())


def read_annotations(path, scene_ids=None):
    """Load an annotation file; scene ids resolve against `scene_ids` when
    given (project order), else against the file's own scene list."""
    doc = read_json(path)
    _check_version(doc, path)
    names = doc.get("keypoint_names", [])
    ids = list(scene_ids) if scene_ids is not None else list(doc.get("scenes", []))
    index = {sid: i for i, sid in enumerate(ids)}
    entries = []
    for i, e in enumerate(doc.get("entries", [])):
        ctx = f"{path}:entries[{i}]"
        sid = e.get("scene")
        if sid not in index:
            raise ValidationError(f"{ctx}: unknown scene {sid!r}", path=ctx)
        k = int(e.get("keypoint", -1))
        if not (0 <= k < len(names)):
            raise ValidationError(f"{ctx}: keypoint id {k} outside [0, {len(names)})",
                                  path=ctx)
        entries.append(AnnotationEntry(
            scene_index=index[sid], frame_index=int(e["frame"]), keypoint_id=k,
            u=float(e["u"]), v=float(e["v"]),
            depth_raw=e.get("depth_raw"), timestamp=e.get("timestamp"),
            author=e.get("author")))
    return AnnotationSet(doc.get("object_name", ""), names, ids, entries)


def validate_annotations(annotations: AnnotationSet, scenes):
    """Invariant check against actual scene sizes; raises ValidationError."""
    for i, e in enumerate(annotations.entries):
        ctx = f"entries[{i}]"
        scene = scenes[e.scene_index]
        if not (0 <= e.frame_index < scene.frame_count):
            raise ValidationError(
                f"{ctx}: frame {e.frame_index} outside scene "
                f"{scene.scene_id} ({scene.frame_count} frames)", path=ctx)
        if not scene.intrinsics.contains(e.u, e.v):
            raise ValidationError(f"{ctx}: pixel ({e.u}, {e.v}) outside image", path=ctx)


# --- PLY point clouds ---

def write_ply(path, points, normals=None, extra_int=None, extra_int_name="source_scene",
              binary=True):
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {len(points)}",
              "property float x", "property float y", "property float z"]
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float32).reshape(-1, 3)
        header += ["property float nx", "property float ny", "property float nz"]
    if extra_int is not None:
        extra_int = np.asarray(extra_int, dtype=np.int32).reshape(-1)
        header += [f"property int {extra_int_name}"]
    header += ["end_header"]
    cols = [points]
    if normals is not None:
        cols.append(normals)
    if binary:
        body = b""
        rows = []
        for i in range(len(points)):
            row = struct.pack("<3f", *points[i])
            if normals is not None:
                row += struct.pack("<3f", *normals[i])
            if extra_int is not None:
                row += struct.pack("<i", int(extra_int[i]))
            rows.append(row)
        body = b"".join(rows)
        atomic_write_bytes(path, ("\n".join(header) + "\n").encode("ascii") + body)
    else:
        lines = []
        for i in range(len(points)):
            parts = [f"{v:.8g}" for v in points[i]]
            if normals is not None:
                parts += [f"{v:.8g}" for v in normals[i]]
            if extra_int is not None:
                parts.append(str(int(extra_int[i])))
            lines.append(" ".join(parts))
        atomic_write_bytes(path, ("\n".join(header + lines) + "\n").encode("ascii"))


_PLY_TYPES = {"float": ("f", 4), "float32": ("f", 4), "double": ("d", 8),
              "int": ("i", 4), "int32": ("i", 4), "uint": ("I", 4),
              "uchar": ("B", 1), "uint8": ("B", 1), "short": ("h", 2),
              "ushort": ("H", 2)}


def read_ply(path):
    """Minimal PLY reader: single vertex element, scalar properties only.

    Returns (points, properties dict name -> array)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header")
    if end < 0:
        raise ValidationError(f"{path}: no end_header", path=str(path))
    header = data[:end].decode("ascii").splitlines()
    body = data[end:].split(b"\n", 1)[1]
    fmt = None
    count = 0
    props = []
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            if parts[1] != "vertex" and int(parts[2]) > 0:
                raise ValidationError(f"{path}: unsupported element {parts[1]}",
                                      path=str(path))
            if parts[1] == "vertex":
                count = int(parts[2])
        elif parts[0] == "property":
            if parts[1] == "list":
                raise ValidationError(f"{path}: list properties unsupported", path=str(path))
            props.append((parts[2], parts[1]))
    names = [n for n, _ in props]
    if fmt == "ascii":
        rows = []
        text = body.decode("ascii").splitlines()
        for line in text[:count]:
            rows.append([float(v) for v in line.split()])
        arr = np.array(rows, dtype=float).reshape(count, len(props))
        columns = {n: arr[:, i] for i, (n, _) in enumerate(props)}
    elif fmt == "binary_little_endian":
        fmt_str = "<" + "".join(_PLY_TYPES[t][0] for _, t in props)
        size = struct.calcsize(fmt_str)
        columns = {n: np.empty(count) for n in names}
        for i in range(count):
            vals = struct.unpack_from(fmt_str, body, i * size)
            for j, n in enumerate(names):
                columns[n][i] = vals[j]
    else:
        raise ValidationError(f"{path}: unsupported format {fmt}", path=str(path))
    points = np.stack([columns["x"], columns["y"], columns["z"]], axis=1)
    return points, columns


# --- sparse / dense models ---

def write_sparse_model(path, solution, object_name="", keypoint_names=None,
                       scene_ids=None):
    transforms = []
    for i, T in enumerate(solution.transforms):
        transforms.append({
            "scene": scene_ids[i] if scene_ids else str(i),
            "q_wxyz": [float(v) for v in T.q],
            "t": [float(v) for v in T.t]})
    doc = {"schema_version": SCHEMA_VERSION, "object_name": object_name,
           "keypoint_names": list(keypoint_names or []),
           "keypoints": [[float(v) for v in p] for p in solution.keypoints],
           "transforms": transforms,
           "rms_residual": solution.rms_residual,
           "converged": bool(solution.converged),
           "iterations": int(solution.iterations)}
    write_json(path, doc)


def read_sparse_model(path):
    from .solver import SparseSolution
    doc = read_json(path)
    _check_version(doc, path)
    Q = np.array(doc["keypoints"], dtype=float).reshape(-1, 3)
    transforms = [RigidTransform(np.array(t["q_wxyz"]), np.array(t["t"]))
                  for t in doc["transforms"]]
    sol = SparseSolution(Q, transforms, {}, bool(doc.get("converged", True)),
                         int(doc.get("iterations", 0)))
    return sol, doc


def write_dense_model(path, model, binary=True):
    write_ply(path, model.points, extra_int=model.source_scene, binary=binary)


def read_dense_model(path):
    from .segmentation import DenseModel
    points, cols = read_ply(path)
    src = cols.get("source_scene")
    if src is None:
        src = np.zeros(len(points), dtype=int)
    return DenseModel(points, src.astype(int))


# --- label records ---

def write_labels(labels_path, masks_dir, records, scene_id):
    """Per-scene JSON-lines label file; masks go to 1-bit PNGs alongside."""
    lines = []
    masks_dir = Path(masks_dir)
    for rec in records:
        mask_file = None
        if rec.mask is not None:
            mask_file = f"{scene_id}_{rec.frame_index:06d}.png"
            write_mask_png(masks_dir / mask_file, rec.mask)
        doc = {"schema_version": SCHEMA_VERSION, "scene": rec.scene_id,
               "frame": rec.frame_index,
               "keypoints": [list(kp.pixel) if kp.visible else None
                             for kp in rec.keypoints],
               "bbox": list(rec.bbox) if rec.bbox is not None else None,
               "mask_file": mask_file}
        lines.append(json.dumps(doc, sort_keys=True))
    atomic_write_bytes(labels_path, ("\n".join(lines) + "\n").encode())


def read_labels(labels_path, masks_dir=None):
    from .labeling import KeypointLabel, LabelRecord
    path = Path(labels_path)
    if not path.exists():
        raise MissingFile(str(path))
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            _check_version(doc, path)
            kps = [KeypointLabel(tuple(p), True) if p is not None
                   else KeypointLabel(None, False)
                   for p in doc["keypoints"]]
            mask = None
            if doc.get("mask_file") and masks_dir is not None:
                mask = read_mask_png(Path(masks_dir) / doc["mask_file"])
            bbox = tuple(doc["bbox"]) if doc.get("bbox") else None
            records.append(LabelRecord(doc["scene"], int(doc["frame"]), kps, mask, bbox))
    return records


# --- project config ---

@dataclass
class ProjectConfig:
    object_name: str
    keypoint_names: list
    scene_manifests: list          # manifest paths relative to the project root
    output_dir: str = "output"
    solver: dict = field(default_factory=dict)
    growth: dict = field(default_factory=dict)
    label: dict = field(default_factory=dict)
    sample_hz: float = 0.0

    @property
    def n_keypoints(self):
        return len(self.keypoint_names)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "object_name": self.object_name,
                "keypoint_names": list(self.keypoint_names),
                "scene_manifests": list(self.scene_manifests),
                "output_dir": self.output_dir, "solver": dict(self.solver),
                "growth": dict(self.growth), "label": dict(self.label),
                "sample_hz": self.sample_hz}


def write_project(path, config: ProjectConfig):
    write_json(path, config.to_dict())


def read_project(path):
    doc = read_json(path)
    _check_version(doc, path)
    try:
        cfg = ProjectConfig(
            object_name=doc["object_name"],
            keypoint_names=list(doc["keypoint_names"]),
            scene_manifests=list(doc["scene_manifests"]),
            output_dir=doc.get("output_dir", "output"),
            solver=doc.get("solver", {}), growth=doc.get("growth", {}),
            label=doc.get("label", {}), sample_hz=doc.get("sample_hz", 0.0))
    except KeyError as exc:
        raise ValidationError(f"{path}: missing field {exc}", path=str(path))
    if cfg.n_keypoints < 1:
        raise ValidationError(f"{path}: keypoint_names must be nonempty", path=str(path))
    return cfg
