"""Visibility-aware reward for camera trajectories.

A camera trajectory is ``T`` poses; query points are a ``(T, N, 3)`` array
with a validity mask. Point ``(t, i)`` counts as visible when the line of
sight from the camera center to it is unobstructed by ``env + robot[t]`` and
it projects inside the image with positive depth.

The module-level functions mirror the individual reward terms. For scoring
many candidate trajectories at once use :class:`RewardModel`, which shares
the perturbation noise across candidates and issues one batched raycast per
call.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geom3d import CameraIntrinsics, Pose, in_fov_mask, perturb_rotations, project_points
from .meshkit import DEFAULT_EPS, Occluders


class DegenerateInputWarning(RuntimeWarning):
    """Every query point was masked out; the visibility average is undefined."""


@dataclass(frozen=True)
class QueryPointSet:
    points: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.ndim != 3 or P.shape[-1] != 3:
            raise ValueError("query points must have shape (T, N, 3)")
        V = np.ones(P.shape[:2], dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if V.shape != P.shape[:2]:
            raise ValueError("validity mask must have shape (T, N)")
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "valid", V)

    @property
    def horizon(self) -> int:
        return self.points.shape[0]

    @property
    def n_points(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class RewardWeights:
    """Term weights. ``lambda_c``, ``lambda_m`` and ``lambda_s`` are tuning
    choices (R_vis should dominate); ``lambda_var`` and ``sigma_safe`` keep
    their published values of 0.1 and 0.1 m."""

    lambda_c: float = 0.1
    lambda_m: float = 0.5
    lambda_s: float = 0.5
    lambda_var: float = 0.1
    sigma_safe: float = 0.1

    def __post_init__(self):
        vals = [self.lambda_c, self.lambda_m, self.lambda_s, self.lambda_var, self.sigma_safe]
        if not all(np.isfinite(vals)):
            raise ValueError("reward weights must be finite")
        if min(self.lambda_c, self.lambda_m, self.lambda_s) < 0:
            raise ValueError("term weights must be nonnegative")
        if not self.sigma_safe > 0:
            raise ValueError("sigma_safe must be positive")


@dataclass(frozen=True)
class PerturbationConfig:
    J: int = 4
    sigma_pos: float = 0.02
    sigma_rot: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J must be at least 1")

    def draw(self, T: int, rng=None):
        """Translation and axis-angle noise, each ``(J, T, 3)``."""
        rng = np.random.default_rng(self.seed) if rng is None else rng
        dpos = rng.normal(0.0, 1.0, (self.J, T, 3)) * self.sigma_pos
        drot = rng.normal(0.0, 1.0, (self.J, T, 3)) * self.sigma_rot
        return dpos, drot


@dataclass
class RewardBreakdown:
    r_vis: float
    r_close: float
    r_marg: float
    r_safe: float
    total: float
    vis_bits: np.ndarray = field(repr=False)
    degenerate: bool = False

    def as_dict(self) -> dict:
        return dict(r_vis=self.r_vis, r_close=self.r_close, r_marg=self.r_marg,
                    r_safe=self.r_safe, total=self.total)


def traj_arrays(traj):
    """Stack a list of poses into ``(T, 3, 3)`` rotations and ``(T, 3)`` positions."""
    if isinstance(traj, tuple):
        R, t = traj
        return np.asarray(R, dtype=float), np.asarray(t, dtype=float)
    R = np.stack([p.rotation.as_matrix() for p in traj])
    t = np.stack([p.position for p in traj])
    return R, t


def visibility_bits(R, t, intr: CameraIntrinsics, points, occ: Occluders | None,
                    eps: float = DEFAULT_EPS):
    """Per-point visibility ``s * f``.

    ``R`` is ``(..., T, 3, 3)``, ``t`` is ``(..., T, 3)`` and ``points`` is
    ``(T, N, 3)``; the result is a boolean ``(..., T, N)`` array. Robot
    meshes, if any, are selected by the time index ``t``.
    """
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float)
    points = np.asarray(points, dtype=float)
    T, N = points.shape[:2]
    lead = t.shape[:-2]
    Rb = np.broadcast_to(R[..., :, None, :, :], lead + (T, N, 3, 3))
    tb = np.broadcast_to(t[..., :, None, :], lead + (T, N, 3))
    qb = np.broadcast_to(points, lead + (T, N, 3))
    u, v, z = project_points(intr, Rb, tb, qb)
    bits = in_fov_mask(intr, u, v, z)
    if occ is None:
        return bits
    cand = np.flatnonzero(bits.reshape(-1))
    if cand.size:
        steps = np.broadcast_to(np.arange(T)[:, None], lead + (T, N)).reshape(-1)[cand]
        a = tb.reshape(-1, 3)[cand]
        b = qb.reshape(-1, 3)[cand]
        blocked = occ.hits(a, b, step=steps if occ.robot is not None else None, eps=eps)
        flat = bits.reshape(-1).copy()
        flat[cand[blocked]] = False
        bits = flat.reshape(bits.shape)
    return bits


def _masked_mean(x, valid):
    """Mean over the trailing ``(T, N)`` axes restricted to ``valid``."""
    n = int(valid.sum())
    if n == 0:
        return np.zeros(x.shape[:-2]), True
    return np.sum(np.where(valid, x, 0.0), axis=(-2, -1)) / n, False


def point_visibility(pose: Pose, intr: CameraIntrinsics, q, occ: Occluders | None = None,
                     step: int = 0, eps: float = DEFAULT_EPS) -> int:
    R = pose.rotation.as_matrix()[None]
    t = pose.position[None]
    pts = np.zeros((step + 1, 1, 3))
    pts[step, 0] = q
    Rf = np.repeat(R, step + 1, axis=0)
    tf = np.repeat(t, step + 1, axis=0)
    return int(visibility_bits(Rf, tf, intr, pts, occ, eps)[step, 0])


def r_vis(traj, qps: QueryPointSet, intr: CameraIntrinsics, occ: Occluders | None = None,
          eps: float = DEFAULT_EPS) -> float:
    R, t = traj_arrays(traj)
    bits = visibility_bits(R, t, intr, qps.points, occ, eps)
    value, degenerate = _masked_mean(bits.astype(float), qps.valid)
    if degenerate:
        warnings.warn("all query points masked; R_vis set to 0", DegenerateInputWarning, stacklevel=2)
    return float(value)


def r_close(traj, qps: QueryPointSet) -> float:
    _, t = traj_arrays(traj)
    d = np.linalg.norm(t[:, None, :] - qps.points, axis=-1)
    value, _ = _masked_mean(np.exp(-d), qps.valid)
    return float(value)


def r_safe(traj, ee_traj, sigma_safe: float = 0.1) -> float:
    _, t = traj_arrays(traj)
    ee = np.asarray(ee_traj, dtype=float).reshape(-1, 3)
    if len(ee) != len(t):
        raise ValueError("end-effector trajectory length must match the camera trajectory")
    d = np.linalg.norm(t - ee, axis=-1)
    return float(-np.mean(np.exp(-d / sigma_safe)))


def margin_from_samples(vis_samples, lambda_var: float = 0.1):
    """``min_j x_j * (1 - lambda_var * Var_j x)`` over the last axis (population variance)."""
    x = np.asarray(vis_samples, dtype=float)
    return x.min(axis=-1) * (1.0 - lambda_var * x.var(axis=-1))


def r_marg(traj, qps: QueryPointSet, intr: CameraIntrinsics, occ: Occluders | None,
           cfg: PerturbationConfig, lambda_var: float = 0.1, rng=None,
           eps: float = DEFAULT_EPS) -> float:
    R, t = traj_arrays(traj)
    Rj, tj = perturbed_copies(R, t, *cfg.draw(len(t), rng))
    bits = visibility_bits(Rj, tj, intr, qps.points, occ, eps)
    vis_j, _ = _masked_mean(bits.astype(float), qps.valid)
    return float(margin_from_samples(vis_j, lambda_var))


def perturbed_copies(R, t, dpos, drot):
    """Apply ``(J, T, 3)`` noise to ``(..., T, ...)`` poses; output gains a J axis
    just before T."""
    R = np.asarray(R)[..., None, :, :, :]
    tj = np.asarray(t)[..., None, :, :] + dpos
    if np.any(drot != 0):
        Rj = perturb_rotations(R, drot)
    else:
        Rj = np.broadcast_to(R, tj.shape[:-1] + (3, 3))
    return Rj, tj


def composite_reward(traj, qps: QueryPointSet, ee_traj, intr: CameraIntrinsics,
                     occ: Occluders | None, weights: RewardWeights = RewardWeights(),
                     perturb_cfg: PerturbationConfig = PerturbationConfig(),
                     eps: float = DEFAULT_EPS) -> RewardBreakdown:
    model = RewardModel(intr, qps, ee_traj, occ, weights, perturb_cfg, eps)
    R, t = traj_arrays(traj)
    return model.breakdown(R, t)


class RewardModel:
    """Composite reward for a fixed planning context (query points, end
    effector path, occluders), vectorized over candidate trajectories.

    Perturbation noise is drawn once from ``perturb_cfg.seed`` and reused for
    every candidate, so repeated evaluations are deterministic.
    """

    def __init__(self, intr: CameraIntrinsics, qps: QueryPointSet, ee_traj,
                 occ: Occluders | None, weights: RewardWeights = RewardWeights(),
                 perturb_cfg: PerturbationConfig = PerturbationConfig(),
                 eps: float = DEFAULT_EPS):
        self.intr = intr
        self.qps = qps
        self.ee = np.asarray(ee_traj, dtype=float).reshape(-1, 3)
        if len(self.ee) != qps.horizon:
            raise ValueError("end-effector trajectory length must match the query horizon")
        self.occ = occ
        self.weights = weights
        self.perturb_cfg = perturb_cfg
        self.eps = eps
        self.dpos, self.drot = perturb_cfg.draw(qps.horizon)
        self.n_evals = 0

    @property
    def horizon(self) -> int:
        return self.qps.horizon

    def terms(self, R, t):
        """All four terms plus total for ``(B, T, 3, 3)`` / ``(B, T, 3)`` inputs."""
        R = np.asarray(R, dtype=float)
        t = np.asarray(t, dtype=float)
        w = self.weights
        valid = self.qps.valid
        self.n_evals += int(np.prod(t.shape[:-2]))
        bits = visibility_bits(R, t, self.intr, self.qps.points, self.occ, self.eps)
        vis, degenerate = _masked_mean(bits.astype(float), valid)
        d = np.linalg.norm(t[..., :, None, :] - self.qps.points, axis=-1)
        close, _ = _masked_mean(np.exp(-d), valid)
        Rj, tj = perturbed_copies(R, t, self.dpos, self.drot)
        bits_j = visibility_bits(Rj, tj, self.intr, self.qps.points, self.occ, self.eps)
        vis_j, _ = _masked_mean(bits_j.astype(float), valid)
        marg = margin_from_samples(vis_j, w.lambda_var)
        de = np.linalg.norm(t - self.ee, axis=-1)
        safe = -np.mean(np.exp(-de / w.sigma_safe), axis=-1)
        total = vis + w.lambda_c * close + w.lambda_m * marg + w.lambda_s * safe
        return dict(r_vis=vis, r_close=close, r_marg=marg, r_safe=safe, total=total,
                    vis_bits=bits, degenerate=degenerate)

    def breakdown(self, R, t) -> RewardBreakdown:
        out = self.terms(R, t)
        if out["degenerate"]:
            warnings.warn("all query points masked; R_vis set to 0", DegenerateInputWarning, stacklevel=2)
        return RewardBreakdown(
            r_vis=float(out["r_vis"]), r_close=float(out["r_close"]),
            r_marg=float(out["r_marg"]), r_safe=float(out["r_safe"]),
            total=float(out["total"]), vis_bits=out["vis_bits"], degenerate=out["degenerate"])

    def total(self, R, t):
        return self.terms(R, t)["total"]
