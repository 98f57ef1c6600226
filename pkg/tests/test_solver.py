import numpy as np
import pytest

from kplabel import synthetic
from kplabel.errors import DidNotConverge, NotConnected, UnobservedKeypoint
from kplabel.geometry import RigidTransform
from kplabel.solver import (Observation, ObservationSet, SolverOptions, assemble,
                            check_connectivity, initialize, residual_and_jacobian,
                            solve, _pack)

from conftest import random_rigid


def make_obs(Q, transforms, visible=None):
    """Synthesize a consistent observation set: W_s[k] = T_s(Q_k)."""
    obs = {}
    for s, T in enumerate(transforms):
        for k in range(len(Q)):
            if visible is not None and (s, k) not in visible:
                continue
            obs[(s, k)] = Observation(T.apply(Q[k]), 0, (0.0, 0.0))
    return ObservationSet(len(transforms), len(Q), obs)


def random_problem(rng, n_scenes=3, n_keypoints=7):
    Q = rng.normal(scale=0.1, size=(n_keypoints, 3))
    transforms = [RigidTransform.identity()]
    transforms += [random_rigid(rng) for _ in range(n_scenes - 1)]
    return Q, transforms


def test_assemble_overwrite_and_failures(world):
    obs = assemble(world.annotations, world.scenes)
    assert obs.n_scenes == 3
    assert not obs.failures
    # a second click on the same (scene, keypoint) overwrites, keeping provenance
    import copy
    ann = copy.deepcopy(world.annotations)
    first = ann.entries[0]
    dup = copy.deepcopy(first)
    dup.u, dup.frame_index = first.u + 1.0, first.frame_index
    ann.entries.append(dup)
    obs2 = assemble(ann, world.scenes)
    rec = obs2.observations[(first.scene_index, first.keypoint_id)]
    assert rec.pixel[0] == pytest.approx(first.u + 1.0)
    assert rec.overwritten == [(first.frame_index, (first.u, first.v))]


def test_assemble_collects_lift_failures(world):
    import copy
    from kplabel.dataset_io import ArrayScene
    ann = copy.deepcopy(world.annotations)
    scenes = list(world.scenes)
    # punch a depth hole under one click and drop its captured depth sample
    e = ann.entries[0]
    e.depth_raw = None
    src = scenes[e.scene_index]
    holes = np.zeros((src.intrinsics.height, src.intrinsics.width), dtype=np.uint16)
    scenes[e.scene_index] = ArrayScene(
        src.scene_id, src.intrinsics, [src.pose(t) for t in range(src.frame_count)],
        [holes] * src.frame_count)
    obs = assemble(ann, scenes)
    assert len(obs.failures) >= 1
    assert obs.failures[0][2] == e.keypoint_id


def test_connectivity_rigid_and_components():
    rng = np.random.default_rng(10)
    Q, transforms = random_problem(rng, n_scenes=3)
    obs = make_obs(Q, transforms)
    rep = check_connectivity(obs)
    assert rep.solvable
    assert (0, 1) in rep.rigid_pairs and (1, 2) in rep.rigid_pairs

    # scenes 0/1 share everything, scene 2 shares only two keypoints: not rigid
    visible = {(s, k) for s in (0, 1) for k in range(len(Q))}
    visible |= {(2, 0), (2, 1)}
    rep = check_connectivity(make_obs(Q, transforms, visible))
    assert not rep.solvable
    assert (0, 2) in rep.under_constrained
    assert sorted(map(tuple, rep.components)) == [(0, 1), (2,)]


def test_connectivity_collinear_not_rigid():
    Q = np.array([[0.0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [0.3, 0, 0]])
    transforms = [RigidTransform.identity(),
                  random_rigid(np.random.default_rng(11))]
    rep = check_connectivity(make_obs(Q, transforms))
    assert rep.rigid_pairs == set()
    with pytest.raises(NotConnected):
        solve(make_obs(Q, transforms))


def test_unobserved_keypoint_refused():
    rng = np.random.default_rng(12)
    Q, transforms = random_problem(rng)
    visible = {(s, k) for s in range(3) for k in range(len(Q) - 1)}  # drop kp 6
    with pytest.raises(UnobservedKeypoint):
        solve(make_obs(Q, transforms, visible))


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(13)
    Q, transforms = random_problem(rng, n_scenes=3, n_keypoints=5)
    obs = make_obs(Q, transforms)
    # evaluate at a perturbed, non-unit-quaternion state
    x = _pack(Q + rng.normal(scale=0.01, size=Q.shape),
              [transforms[0]] + [random_rigid(rng) for _ in range(2)])
    x = x + rng.normal(scale=0.01, size=x.shape)
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
    rel = np.abs(J - J_num).max() / max(np.abs(J_num).max(), 1.0)
    assert rel < 1e-5


def test_single_scene_identity_gauge():
    rng = np.random.default_rng(14)
    Q = rng.normal(scale=0.1, size=(6, 3))
    obs = make_obs(Q, [RigidTransform.identity()])
    sol = solve(obs)
    assert np.allclose(sol.transforms[0].matrix(), np.eye(4))
    assert np.allclose(sol.keypoints, Q, atol=1e-10)


def test_noiseless_exact_recovery(world):
    obs = assemble(world.annotations, world.scenes)
    sol = solve(obs)
    assert sol.converged
    assert sol.rms_residual < 1e-9
    assert np.allclose(sol.transforms[0].matrix(), np.eye(4))
    assert np.allclose(sol.keypoints, world.keypoints_world, atol=1e-6)
    for T, T_true in zip(sol.transforms, world.transforms_true):
        assert np.allclose(T.matrix(), T_true.matrix(), atol=1e-6)


def test_gauge_invariance_of_keypoint_distances():
    rng = np.random.default_rng(15)
    Q, transforms = random_problem(rng)
    obs_a = make_obs(Q, transforms)
    G = random_rigid(rng)
    # move every scene's observations by a common rigid motion
    obs_b = ObservationSet(obs_a.n_scenes, obs_a.n_keypoints, {
        key: Observation(G.apply(o.point), o.frame_index, o.pixel)
        for key, o in obs_a.observations.items()})
    da = _pairwise(solve(obs_a).keypoints)
    db = _pairwise(solve(obs_b).keypoints)
    assert np.abs(da - db).max() < 1e-6


def _pairwise(Q):
    d = Q[:, None, :] - Q[None, :, :]
    return np.sqrt(np.sum(d * d, axis=-1))


def test_noise_recovery_small_error():
    from kplabel.metrics import sparse_model_error
    errs = []
    for seed in range(3):
        spec = synthetic.WorldSpec(seed=seed, render=False,
                                   click_sigma_px=2.0, depth_sigma_m=0.002)
        w = synthetic.generate(spec)
        sol = solve(assemble(w.annotations, w.scenes))
        err, _ = sparse_model_error(sol.keypoints, w.keypoints_world)
        errs.append(err)
    assert np.median(errs) < 10.0  # mm


def test_did_not_converge_carries_partial_solution(world):
    obs = assemble(world.annotations, world.scenes)
    with pytest.raises(DidNotConverge) as exc:
        solve(obs, SolverOptions(max_iterations=2))
    sol = exc.value.solution
    assert sol is not None and sol.iterations == 2 and not sol.converged


def test_warm_start_initialization(world):
    obs = assemble(world.annotations, world.scenes)
    Q0, T0, _ = initialize(obs, warm_start=True)
    # closed-form chaining should already be near the truth (noiseless input)
    assert np.abs(Q0 - world.keypoints_world).max() < 1e-6
    sol = solve(obs, SolverOptions(warm_start=True))
    assert sol.converged and sol.rms_residual < 1e-9


def test_quaternions_stay_unit(world):
    obs = assemble(world.annotations, world.scenes)
    sol = solve(obs)
    for T in sol.transforms:
        assert np.isclose(np.linalg.norm(T.q), 1.0, atol=1e-12)
