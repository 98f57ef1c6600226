"""Acceptance gate: one test per acceptance criterion, tolerances pinned.

Each test prints a single PASS/FAIL line (visible with -s or on failure) in
addition to the usual pytest verdict.
"""

import copy
import time

import numpy as np
import pytest

from kplabel import dataset_io as dio, pipeline, synthetic
from kplabel.errors import Degenerate, NotConnected
from kplabel.geometry import RigidTransform, quat_multiply, quat_to_matrix
from kplabel.labeling import keypoint_labels
from kplabel.metrics import (iou, keypoint_error_2d, rotation_geodesic,
                             sparse_model_error)
from kplabel.registration import horn_align, register_new_scene
from kplabel.solver import (Observation, ObservationSet, assemble,
                            residual_and_jacobian, solve, _pack)

from conftest import random_rigid

# pinned tolerances
E2E_TIME_LIMIT_S = 60.0
E2E_RMS_3D_M = 1e-6
E2E_2D_PX = 0.5
E2E_IOU = 0.99
NOISE_SEEDS = 20
NOISE_CLICK_PX = 2.0
NOISE_DEPTH_M = 0.002
NOISE_MEDIAN_3D_MM = 6.0
NOISE_MEDIAN_2D_PX = 10.0
SWEEP_SEEDS = 5
HORN_TOL = 1e-6
JACOBIAN_REL = 1e-5
GAUGE_TOL_M = 1e-6
ROTATION_ORACLE_TOL = 1e-9
REGAUGE_TOL = 1e-12


def report(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def solve_noisy(seed, n_keypoints=9, n_scenes=3):
    spec = synthetic.WorldSpec(seed=seed, render=False,
                               n_keypoints=n_keypoints, n_scenes=n_scenes,
                               click_sigma_px=NOISE_CLICK_PX,
                               depth_sigma_m=NOISE_DEPTH_M)
    w = synthetic.generate(spec)
    return w, solve(assemble(w.annotations, w.scenes))


def test_criterion_1_noiseless_end_to_end(tmp_path):
    t0 = time.monotonic()
    spec_path = tmp_path / "spec.json"
    synthetic.write_spec(spec_path, synthetic.WorldSpec(
        seed=7, width=640, height=480, focal=560.0))
    root = tmp_path / "ds"
    pipeline.stage_simulate(spec_path, root)
    pipeline.stage_optimize(root)
    pipeline.stage_densify(root)
    pipeline.stage_label(root)
    metrics = pipeline.stage_evaluate(root).to_dict()
    elapsed = time.monotonic() - t0

    sol, _ = dio.read_sparse_model(root / "output" / "sparse_model.json")
    gt, _ = dio.read_sparse_model(root / "gt" / "sparse_model.json")
    _, aligned = sparse_model_error(sol.keypoints, gt.keypoints)
    rms_3d = float(np.sqrt(np.mean(np.sum((aligned - gt.keypoints) ** 2, axis=1))))

    detail = (f"{elapsed:.1f}s, rms 3D {rms_3d:.2e} m, "
              f"2D {metrics['mean_2d_error_px']:.2e} px, IoU {metrics['mean_iou']:.4f}")
    report("noiseless end-to-end pipeline",
           elapsed < E2E_TIME_LIMIT_S and rms_3d < E2E_RMS_3D_M
           and metrics["mean_2d_error_px"] < E2E_2D_PX
           and metrics["mean_iou"] >= E2E_IOU, detail)


def test_criterion_2_noise_robustness():
    errs_3d, errs_2d = [], []
    for seed in range(NOISE_SEEDS):
        w, sol = solve_noisy(seed)
        err, _ = sparse_model_error(sol.keypoints, w.keypoints_world)
        errs_3d.append(err)
        frame_errs = []
        for s, scene in enumerate(w.scenes):
            for t in range(scene.frame_count):
                labels = keypoint_labels(sol.keypoints, sol.transforms[s],
                                         scene.pose(t), scene.intrinsics)
                gt_px, gt_vis = w.gt_keypoint_frame_labels(s, t)
                both = [(labels[k].pixel, gt_px[k]) for k in range(9)
                        if labels[k].visible and gt_vis[k]]
                if both:
                    pr, gt = zip(*both)
                    frame_errs.append(keypoint_error_2d(np.array(pr), np.array(gt)))
        errs_2d.append(np.mean(frame_errs))
    med_3d, med_2d = np.median(errs_3d), np.median(errs_2d)
    report("noise robustness over seeds",
           med_3d <= NOISE_MEDIAN_3D_MM and med_2d <= NOISE_MEDIAN_2D_PX,
           f"median 3D {med_3d:.2f} mm, median 2D {med_2d:.2f} px over "
           f"{NOISE_SEEDS} seeds")


def test_criterion_3_sweep_shapes():
    def median_err(n_keypoints, n_scenes):
        errs = []
        for seed in range(SWEEP_SEEDS):
            w, sol = solve_noisy(seed, n_keypoints, n_scenes)
            err, _ = sparse_model_error(sol.keypoints, w.keypoints_world)
            errs.append(err)
        return float(np.median(errs))

    nk_curve = [median_err(nk, 8) for nk in (6, 9, 12, 16)]
    ns_curve = [median_err(9, ns) for ns in (2, 4, 6, 8)]
    nk_flat = max(nk_curve) / min(nk_curve) < 2.0
    ns_monotone = all(b <= a for a, b in zip(ns_curve, ns_curve[1:]))
    report("error sweeps over N_k and N_s",
           nk_flat and ns_monotone,
           f"N_k curve {[round(v, 2) for v in nk_curve]} mm, "
           f"N_s curve {[round(v, 2) for v in ns_curve]} mm")


def test_criterion_4_horn_registration(world):
    sol = solve(assemble(world.annotations, world.scenes))
    ann = copy.deepcopy(world.annotations)
    ann.entries = [copy.deepcopy(e) for e in ann.entries if e.scene_index == 2]
    for e in ann.entries:
        e.scene_index = 0
    result = register_new_scene(sol.keypoints, ann, world.scenes[2])
    T_true = world.transforms_true[2]
    rot = rotation_geodesic(result.transform.rotation_matrix(),
                            T_true.rotation_matrix())
    trans = float(np.linalg.norm(result.transform.t - T_true.t))
    line = np.array([[0.0, 0, 0], [0.1, 0, 0], [0.2, 0, 0]])
    try:
        horn_align(line, line + 0.5)
        rejected = False
    except Degenerate:
        rejected = True
    report("new-scene registration",
           rot < HORN_TOL and trans < HORN_TOL and rejected,
           f"rotation {rot:.2e} rad, translation {trans:.2e} m, "
           f"collinear input rejected: {rejected}")


def test_criterion_5_solver_battery(world):
    rng = np.random.default_rng(100)
    ok, details = True, []

    # single-scene gauge identity
    Q = rng.normal(scale=0.1, size=(6, 3))
    obs1 = ObservationSet(1, 6, {(0, k): Observation(Q[k], 0, (0, 0))
                                 for k in range(6)})
    s1 = solve(obs1)
    ident = (np.abs(s1.transforms[0].matrix() - np.eye(4)).max() < 1e-12
             and np.abs(s1.keypoints - Q).max() < 1e-9)
    ok &= ident
    details.append(f"single-scene identity {ident}")

    # gauge invariance of pairwise distances under common rigid motion
    obs = assemble(world.annotations, world.scenes)
    G = random_rigid(rng)
    moved = ObservationSet(obs.n_scenes, obs.n_keypoints, {
        key: Observation(G.apply(o.point), o.frame_index, o.pixel)
        for key, o in obs.observations.items()})
    def pd(Q):
        d = Q[:, None] - Q[None, :]
        return np.sqrt((d * d).sum(-1))
    gauge_dev = np.abs(pd(solve(obs).keypoints) - pd(solve(moved).keypoints)).max()
    ok &= gauge_dev < GAUGE_TOL_M
    details.append(f"gauge deviation {gauge_dev:.2e} m")

    # analytic Jacobian vs central differences
    x = _pack(rng.normal(scale=0.1, size=(obs.n_keypoints, 3)),
              [RigidTransform.identity()] + [random_rigid(rng) for _ in range(2)])
    r, J = residual_and_jacobian(x, obs)
    h = 1e-6
    J_num = np.zeros_like(J)
    for j in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        rp, _ = residual_and_jacobian(xp, obs, with_jacobian=False)
        rm, _ = residual_and_jacobian(xm, obs, with_jacobian=False)
        J_num[:, j] = (rp - rm) / (2 * h)
    jac_rel = np.abs(J - J_num).max() / max(np.abs(J_num).max(), 1.0)
    ok &= jac_rel < JACOBIAN_REL
    details.append(f"jacobian rel err {jac_rel:.2e}")

    # refusal to solve a disconnected scene graph
    disconnected = ObservationSet(2, 6, {
        **{(0, k): Observation(Q[k], 0, (0, 0)) for k in range(3)},
        **{(1, k): Observation(Q[k], 0, (0, 0)) for k in range(3, 6)}})
    try:
        solve(disconnected)
        refused = False
    except NotConnected:
        refused = True
    ok &= refused
    details.append(f"disconnected refused {refused}")
    report("solver unit battery", ok, ", ".join(details))


def test_criterion_6_metric_oracles():
    a = np.zeros((10, 10), dtype=bool)
    b = np.zeros((10, 10), dtype=bool)
    a[:, 0:2] = True
    b[:, 1:3] = True
    iou_ok = iou(a, b) == pytest.approx(1.0 / 3.0)

    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        qa = rng.normal(size=4)
        qa /= np.linalg.norm(qa)
        qb = rng.normal(size=4)
        qb /= np.linalg.norm(qb)
        rel = quat_multiply(qa * [1, -1, -1, -1], qb)
        expected = 2.0 * np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0]))
        got = rotation_geodesic(quat_to_matrix(qa), quat_to_matrix(qb))
        worst = max(worst, abs(got - expected))
    rot_ok = worst < ROTATION_ORACLE_TOL

    gt = np.array([[0.0, 0.0], [7.0, -2.0]])
    err_ok = keypoint_error_2d(gt + [3.0, 4.0], gt) == pytest.approx(5.0)
    report("metric oracles", iou_ok and rot_ok and err_ok,
           f"IoU third {iou_ok}, rotation worst dev {worst:.1e}, 3-4-5 {err_ok}")


def test_criterion_7_io_round_trips(tmp_path, world):
    rng = np.random.default_rng(102)
    ok, details = True, []

    intr = world.intrinsics
    m = dio.SceneManifest("s0", "color", "depth", "traj.txt", intr, 4)
    dio.write_manifest(tmp_path / "m.json", m)
    ok &= dio.read_manifest(tmp_path / "m.json") == m

    dio.write_annotations(tmp_path / "a.json", world.annotations)
    ok &= dio.read_annotations(tmp_path / "a.json") == world.annotations

    spec = world.spec
    synthetic.write_spec(tmp_path / "w.json", spec)
    ok &= synthetic.read_spec(tmp_path / "w.json") == spec

    sol = solve(assemble(world.annotations, world.scenes))
    dio.write_sparse_model(tmp_path / "sm.json", sol, "o", ["k"] * 9,
                           ["s0", "s1", "s2"])
    back, _ = dio.read_sparse_model(tmp_path / "sm.json")
    ok &= np.abs(back.keypoints - sol.keypoints).max() < 1e-12

    pts = rng.normal(size=(50, 3)).astype(np.float32)
    dio.write_ply(tmp_path / "p.ply", pts, extra_int=np.arange(50))
    back_pts, cols = dio.read_ply(tmp_path / "p.ply")
    ok &= np.allclose(back_pts, pts, atol=1e-6)
    ok &= np.array_equal(cols["source_scene"], np.arange(50))

    from kplabel.labeling import KeypointLabel, LabelRecord
    mask = rng.random((24, 32)) < 0.3
    recs = [LabelRecord("s0", 0, [KeypointLabel((1.0, 2.0), True)], mask,
                        (5.0, 6.0, 7.0))]
    dio.write_labels(tmp_path / "l.jsonl", tmp_path / "masks", recs, "s0")
    back_recs = dio.read_labels(tmp_path / "l.jsonl", tmp_path / "masks")
    ok &= (np.array_equal(back_recs[0].mask, mask)
           and back_recs[0].bbox == (5.0, 6.0, 7.0))
    details.append("manifest/annotations/spec/model/ply/labels round trips")

    # trajectory re-gauging preserves relative poses
    poses = [random_rigid(rng) for _ in range(5)]
    dio.write_trajectory(tmp_path / "t.txt", poses)
    loaded, _ = dio.read_trajectory(tmp_path / "t.txt")
    worst = 0.0
    for i in range(5):
        for j in range(5):
            rel_in = (poses[i].inverse() @ poses[j]).matrix()
            rel_out = (loaded[i].inverse() @ loaded[j]).matrix()
            worst = max(worst, np.abs(rel_in - rel_out).max())
    ok &= worst < REGAUGE_TOL
    details.append(f"re-gauge dev {worst:.1e}")
    report("I/O round trips", ok, ", ".join(details))
