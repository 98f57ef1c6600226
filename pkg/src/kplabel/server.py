"""HTTP API consumed by the browser annotation tool.

GET endpoints are side-effect free; annotation POSTs validate against the
annotation-file invariants before anything is persisted, and writes are
serialized through a single lock. A full solve only runs when the server was
started with solving explicitly enabled, and it executes on a worker thread
with polled status.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from pydantic import BaseModel

from . import dataset_io as dio
from .errors import KplabelError
from .pipeline import Project
from .solver import assemble, check_connectivity, solve


class ClickIn(BaseModel):
    scene: str
    frame: int
    keypoint: int
    u: float
    v: float
    timestamp: float | None = None
    author: str | None = None


def create_app(project_root, allow_solve=False) -> FastAPI:
    proj = Project(project_root)
    app = FastAPI(title="kplabel annotation service")
    lock = threading.Lock()
    solve_state = {"state": "idle", "rms_residual_m": None, "iterations": None,
                   "error": None}

    def scene_by_id(scene_id):
        for s, scene in enumerate(proj.scenes):
            if scene.scene_id == scene_id:
                return s, scene
        raise HTTPException(status_code=404, detail=f"unknown scene {scene_id!r}")

    def load_annotations():
        if proj.annotations_path.exists():
            return dio.read_annotations(proj.annotations_path, proj.scene_ids)
        return dio.AnnotationSet(proj.config.object_name,
                                 proj.config.keypoint_names, proj.scene_ids, [])

    @app.get("/api/project")
    def get_project():
        return {"object_name": proj.config.object_name,
                "keypoint_names": proj.config.keypoint_names,
                "n_keypoints": proj.config.n_keypoints,
                "scenes": proj.scene_ids}

    @app.get("/api/scenes")
    def get_scenes():
        return [{"scene_id": s.scene_id, "frame_count": s.frame_count,
                 "fps": s.fps, "width": s.intrinsics.width,
                 "height": s.intrinsics.height} for s in proj.scenes]

    @app.get("/api/scenes/{scene_id}/frames/{frame}/color")
    def get_color(scene_id: str, frame: int):
        _, scene = scene_by_id(scene_id)
        if not (0 <= frame < scene.frame_count):
            raise HTTPException(status_code=404,
                                detail=f"frame {frame} outside scene {scene_id}")
        path = scene.color_path(frame)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no color frame {path.name}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/api/annotations")
    def get_annotations():
        return load_annotations().to_dict()

    @app.post("/api/annotations", status_code=201)
    def post_annotation(click: ClickIn):
        s, scene = scene_by_id(click.scene)
        if not (0 <= click.keypoint < proj.config.n_keypoints):
            raise HTTPException(status_code=400, detail=(
                f"keypoint id {click.keypoint} violates 0 <= id < "
                f"{proj.config.n_keypoints}"))
        if not (0 <= click.frame < scene.frame_count):
            raise HTTPException(status_code=400, detail=(
                f"frame {click.frame} violates 0 <= frame < {scene.frame_count}"))
        if not scene.intrinsics.contains(click.u, click.v):
            raise HTTPException(status_code=400, detail=(
                f"pixel ({click.u}, {click.v}) outside "
                f"{scene.intrinsics.width}x{scene.intrinsics.height} image"))
        with lock:
            ann = load_annotations()
            ann.entries.append(dio.AnnotationEntry(
                scene_index=s, frame_index=click.frame, keypoint_id=click.keypoint,
                u=click.u, v=click.v, timestamp=click.timestamp,
                author=click.author))
            dio.write_annotations(proj.annotations_path, ann)
        return {"entries": len(ann.entries)}

    @app.get("/api/connectivity")
    def get_connectivity():
        ann = load_annotations()
        obs = assemble(ann, proj.scenes)
        report = check_connectivity(obs)
        pairs = []
        for (a, b), count in sorted(report.shared_counts.items()):
            pairs.append({"scenes": [proj.scene_ids[a], proj.scene_ids[b]],
                          "shared_keypoints": count,
                          "rigid": (a, b) in report.rigid_pairs})
        return {"pairs": pairs,
                "components": [[proj.scene_ids[i] for i in comp]
                               for comp in report.components],
                "solvable": report.solvable,
                "lift_failures": len(obs.failures)}

    @app.post("/api/solve", status_code=202)
    def post_solve():
        if not allow_solve:
            raise HTTPException(status_code=403,
                                detail="solve endpoint disabled; start the server "
                                       "with --allow-solve")
        with lock:
            if solve_state["state"] == "running":
                raise HTTPException(status_code=409, detail="solve already running")
            solve_state.update(state="running", error=None)

        def run():
            try:
                ann = load_annotations()
                obs = assemble(ann, proj.scenes)
                solution = solve(obs, proj.solver_options())
                dio.write_sparse_model(proj.sparse_model_path, solution,
                                       proj.config.object_name,
                                       proj.config.keypoint_names, proj.scene_ids)
                solve_state.update(state="done",
                                   rms_residual_m=solution.rms_residual,
                                   iterations=solution.iterations)
            except KplabelError as exc:
                solve_state.update(state="error", error=str(exc))

        threading.Thread(target=run, daemon=True).start()
        return {"state": "running"}

    @app.get("/api/solve/status")
    def get_solve_status():
        return dict(solve_state)

    return app
