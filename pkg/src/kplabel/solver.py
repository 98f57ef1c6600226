"""Observation assembly and the joint sparse-model / scene-transform solve.

The unknowns are the keypoint positions Q (world frame, fixed to scene 0's
first camera pose) and one rigid transform per scene mapping world
coordinates into that scene's first-camera frame. Scene 0's transform is
frozen to the identity, which removes the 6-DoF gauge exactly. The objective
is the sum of squared 3D residuals T_s(Q_k) - W_s[k] over annotated (s, k)
pairs, minimized by damped least squares with the quaternions renormalized
after every accepted step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDepth, NotConnected, OutOfBounds, UnobservedKeypoint, DidNotConverge
from .geometry import RigidTransform, lift_annotation, quat_to_matrix
from .registration import horn_align

COLLINEARITY_TOL = 1e-6  # meters; second singular value of the centered set


@dataclass
class Observation:
    point: np.ndarray            # 3D point in the scene's first-camera frame
    frame_index: int
    pixel: tuple
    overwritten: list = field(default_factory=list)  # earlier clicks on the same (s, k)


@dataclass
class ObservationSet:
    n_scenes: int
    n_keypoints: int
    observations: dict          # (scene_index, keypoint_id) -> Observation
    failures: list = field(default_factory=list)  # (scene, frame, kp, pixel, reason)

    def scene_points(self, s):
        """keypoint_id -> point for one scene, in keypoint order."""
        return {k: self.observations[(s, k)].point
                for (si, k) in sorted(self.observations) if si == s}

    def pairs(self):
        return sorted(self.observations)


def assemble(annotations, scenes) -> ObservationSet:
    """Lift every click into its scene's first-camera frame.

    Later clicks on the same (scene, keypoint) overwrite earlier ones; the
    superseded clicks stay recorded in the observation's provenance. Failed
    lifts (depth holes, out-of-bounds clicks) are collected, not dropped
    silently.
    """
    obs = {}
    failures = []
    for entry in annotations.entries:
        s = entry.scene_index
        if not (0 <= s < len(scenes)):
            raise ValueError(f"annotation references unknown scene index {s}")
        if not (0 <= entry.keypoint_id < annotations.n_keypoints):
            raise ValueError(f"keypoint id {entry.keypoint_id} out of range")
        try:
            p = lift_annotation(scenes[s], entry.frame_index,
                                (entry.u, entry.v), entry.depth_raw)
        except (InvalidDepth, OutOfBounds) as exc:
            failures.append((s, entry.frame_index, entry.keypoint_id,
                             (entry.u, entry.v), str(exc)))
            continue
        key = (s, entry.keypoint_id)
        prev = obs.get(key)
        rec = Observation(p, entry.frame_index, (entry.u, entry.v))
        if prev is not None:
            rec.overwritten = prev.overwritten + [(prev.frame_index, prev.pixel)]
        obs[key] = rec
    return ObservationSet(len(scenes), annotations.n_keypoints, obs, failures)


@dataclass
class ConnectivityReport:
    shared_counts: dict        # (s_a, s_b) -> number of shared keypoint ids
    rigid_pairs: set           # pairs sharing >= 3 non-collinear keypoints
    under_constrained: list    # pairs sharing >= 1 keypoint but not rigid
    components: list           # list of sorted scene-index lists, rigid edges only

    @property
    def solvable(self):
        return len(self.components) == 1


def _noncollinear(points):
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return False
    c = pts - pts.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    return len(sv) >= 2 and sv[1] > COLLINEARITY_TOL


def check_connectivity(obs: ObservationSet) -> ConnectivityReport:
    """Rigidity graph over scenes: an edge is rigid iff the pair shares
    >= 3 keypoints whose lifted points are non-collinear."""
    by_scene = [dict() for _ in range(obs.n_scenes)]
    for (s, k), o in obs.observations.items():
        by_scene[s][k] = o.point
    shared, rigid, weak = {}, set(), []
    for a in range(obs.n_scenes):
        for b in range(a + 1, obs.n_scenes):
            ks = sorted(set(by_scene[a]) & set(by_scene[b]))
            if not ks:
                continue
            shared[(a, b)] = len(ks)
            pts_a = [by_scene[a][k] for k in ks]
            pts_b = [by_scene[b][k] for k in ks]
            if len(ks) >= 3 and _noncollinear(pts_a) and _noncollinear(pts_b):
                rigid.add((a, b))
            else:
                weak.append((a, b))
    # connected components over rigid edges
    adj = {s: set() for s in range(obs.n_scenes)}
    for a, b in rigid:
        adj[a].add(b)
        adj[b].add(a)
    seen, comps = set(), []
    for s in range(obs.n_scenes):
        if s in seen:
            continue
        stack, comp = [s], []
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            comp.append(x)
            stack.extend(sorted(adj[x] - seen))
        comps.append(sorted(comp))
    return ConnectivityReport(shared, rigid, weak, comps)


@dataclass
class SolverOptions:
    max_iterations: int = 500
    step_tol: float = 1e-10
    objective_tol: float = 1e-12
    damping_init: float = 1e-3
    warm_start: bool = False


@dataclass
class SparseSolution:
    keypoints: np.ndarray          # (N_k, 3) in the world frame
    transforms: list               # world -> scene first-camera frame, per scene
    residuals: dict                # (s, k) -> 3-vector
    converged: bool
    iterations: int
    notes: list = field(default_factory=list)

    @property
    def rms_residual(self):
        if not self.residuals:
            return 0.0
        r = np.array(list(self.residuals.values()))
        return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))


def initialize(obs: ObservationSet, warm_start=False):
    """Starting iterate: all keypoints at the origin, all scene rotations the
    identity quaternion, all translations zero. With warm_start, scenes
    reachable through rigid edges get a closed-form alignment instead and
    keypoints start at their averaged back-mapped observations."""
    K, S = obs.n_keypoints, obs.n_scenes
    transforms = [RigidTransform.identity() for _ in range(S)]
    Q = np.zeros((K, 3))
    notes = []
    if warm_start:
        report = check_connectivity(obs)
        by_scene = [dict() for _ in range(S)]
        for (s, k), o in obs.observations.items():
            by_scene[s][k] = o.point
        known = {0}
        frontier = [0]
        adj = {s: set() for s in range(S)}
        for a, b in report.rigid_pairs:
            adj[a].add(b)
            adj[b].add(a)
        while frontier:
            a = frontier.pop(0)
            for b in sorted(adj[a]):
                if b in known:
                    continue
                ks = sorted(set(by_scene[a]) & set(by_scene[b]))
                src = transforms[a].inverse().apply(
                    np.array([by_scene[a][k] for k in ks]))  # world coords
                dst = np.array([by_scene[b][k] for k in ks])
                transforms[b] = horn_align(src, dst)
                known.add(b)
                frontier.append(b)
        for s in range(S):
            if s not in known and by_scene[s]:
                notes.append(f"scene {s} not rigidly reachable; default initialization kept")
        sums = np.zeros((K, 3))
        counts = np.zeros(K)
        for (s, k), o in obs.observations.items():
            if s in known:
                sums[k] += transforms[s].inverse().apply(o.point)
                counts[k] += 1
        Q[counts > 0] = sums[counts > 0] / counts[counts > 0, None]
    return Q, transforms, notes


def _rotate_jacobians(q, p):
    """d(R(q) p)/dq for unit q = (w, v) via R p = p + 2w (v x p) + 2 v x (v x p)."""
    w, v = q[0], q[1:]
    px = np.array([[0, -p[2], p[1]], [p[2], 0, -p[0]], [-p[1], p[0], 0]])
    dw = 2.0 * np.cross(v, p)
    dv = 2.0 * (-w * px + np.dot(v, p) * np.eye(3)
                + np.outer(v, p) - 2.0 * np.outer(p, v))
    return dw, dv


def _pack(Q, transforms):
    parts = [Q.ravel()]
    for T in transforms[1:]:
        parts.append(T.q)
        parts.append(T.t)
    return np.concatenate(parts)


def _unpack(x, K, S):
    Q = x[:3 * K].reshape(K, 3)
    transforms = [RigidTransform.identity()]
    off = 3 * K
    for _ in range(1, S):
        transforms.append(RigidTransform(x[off:off + 4], x[off + 4:off + 7]))
        off += 7
    return Q, transforms


def _renormalize(x, K, S):
    x = x.copy()
    off = 3 * K
    for _ in range(1, S):
        n = np.linalg.norm(x[off:off + 4])
        if n > 1e-12:
            x[off:off + 4] /= n
        off += 7
    return x


def residual_and_jacobian(x, obs: ObservationSet, with_jacobian=True):
    """Stacked 3D residuals over observations in (scene, keypoint) order and,
    optionally, the dense analytic Jacobian."""
    K, S = obs.n_keypoints, obs.n_scenes
    pairs = obs.pairs()
    Q = x[:3 * K].reshape(K, 3)
    r = np.zeros(3 * len(pairs))
    J = np.zeros((3 * len(pairs), len(x))) if with_jacobian else None
    for i, (s, k) in enumerate(pairs):
        w = obs.observations[(s, k)].point
        if s == 0:
            q = np.array([1.0, 0.0, 0.0, 0.0])
            t = np.zeros(3)
            off = None
            n = 1.0
        else:
            off = 3 * K + 7 * (s - 1)
            q_raw = x[off:off + 4]
            n = np.linalg.norm(q_raw)
            q = q_raw / n     # rotation is evaluated on the normalized quaternion
            t = x[off + 4:off + 7]
        R = quat_to_matrix(q)
        r[3 * i:3 * i + 3] = R @ Q[k] + t - w
        if with_jacobian:
            J[3 * i:3 * i + 3, 3 * k:3 * k + 3] = R
            if off is not None:
                dw, dv = _rotate_jacobians(q, Q[k])
                Dq = np.column_stack([dw, dv])
                # chain rule through q_raw -> q_raw/|q_raw|
                J[3 * i:3 * i + 3, off:off + 4] = \
                    Dq @ ((np.eye(4) - np.outer(q, q)) / n)
                J[3 * i:3 * i + 3, off + 4:off + 7] = np.eye(3)
    return r, J


def solve(obs: ObservationSet, opts: SolverOptions | None = None) -> SparseSolution:
    """Minimize the stacked residual with Levenberg-Marquardt-style damping.

    Scene 0's transform never enters the parameter vector; unit quaternions
    are restored after every accepted step, so the constraint holds by
    construction. Deterministic: observations enter in (scene, keypoint)
    order and there is no randomized component.
    """
    opts = opts or SolverOptions()
    observed = {k for (_, k) in obs.observations}
    missing = sorted(set(range(obs.n_keypoints)) - observed)
    if missing:
        raise UnobservedKeypoint(f"keypoints never annotated in any scene: {missing}")
    report = check_connectivity(obs)
    if not report.solvable:
        raise NotConnected(
            f"scene graph has {len(report.components)} rigid components: "
            f"{report.components}; add shared non-collinear keypoints")

    K, S = obs.n_keypoints, obs.n_scenes
    Q0, T0, notes = initialize(obs, warm_start=opts.warm_start)
    x = _pack(Q0, T0)
    lam = opts.damping_init
    r, J = residual_and_jacobian(x, obs)
    cost = float(r @ r)
    converged = False
    it = 0
    for it in range(1, opts.max_iterations + 1):
        g = J.T @ r
        JTJ = J.T @ J
        accepted = False
        while lam < 1e14:
            A = JTJ + lam * np.eye(len(x))
            try:
                delta = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = _renormalize(x + delta, K, S)
            r_new, _ = residual_and_jacobian(x_new, obs, with_jacobian=False)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True  # damping exhausted: no descent direction left
            break
        step = np.linalg.norm(x_new - x)
        drop = cost - cost_new
        x = x_new
        r, J = residual_and_jacobian(x, obs)
        cost = cost_new
        lam = max(lam / 10.0, 1e-12)
        if step < opts.step_tol or drop < opts.objective_tol * max(cost, 1e-30):
            converged = True
            break

    Q, transforms = _unpack(x, K, S)
    residuals = {}
    pairs = obs.pairs()
    r_final, _ = residual_and_jacobian(x, obs, with_jacobian=False)
    for i, pair in enumerate(pairs):
        residuals[pair] = r_final[3 * i:3 * i + 3].copy()
    solution = SparseSolution(Q, transforms, residuals, converged, it, notes)
    if not converged:
        raise DidNotConverge(
            f"iteration cap {opts.max_iterations} reached (rms {solution.rms_residual:.3e})",
            solution=solution)
    return solution
