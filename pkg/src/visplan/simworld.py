"""Synthetic receding-horizon episodes.

Scripted stand-ins replace the learned models: an end-effector waypoint
script plays the robot policy, rigidly attached query points play the flow
model, and a noisy look-at "head camera" controller produces the
demonstration trajectories that the view prior is fitted to.

Every ``H`` steps the loop fetches the next ``T`` actions and query points,
fits the view prior to the demo windows for those steps, samples a camera
trajectory with :func:`visplan.svdd.rew_max_diff`, and executes its first
``H`` poses. Rewards are logged per executed step.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _SR, Slerp

from .diffusion import fit_demo_prior
from .geom3d import CameraIntrinsics, Pose, Rotation, look_at, matrix_to_rot6d, rot6d_to_matrix
from .meshkit import DEFAULT_EPS, Occluders, TriMesh, capsule_mesh
from .svdd import SvddConfig, decode_arrays, rew_max_diff
from .visibility import PerturbationConfig, QueryPointSet, RewardModel, RewardWeights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Waypoint:
    t: int
    position: np.ndarray
    rotation: Rotation = field(default_factory=Rotation.identity)
    gripper: int = 0


class EEScript:
    """End-effector proprioception ``p_t`` (position, 6D rotation, gripper bit).

    Positions interpolate linearly and rotations spherically between
    waypoints; the gripper holds the value of the latest waypoint reached.
    Times outside ``[0, length]`` clamp to the ends.
    """

    def __init__(self, waypoints, length: int):
        wps = sorted(waypoints, key=lambda w: w.t)
        if not wps:
            raise ValueError("script needs at least one waypoint")
        if len({w.t for w in wps}) != len(wps):
            raise ValueError("waypoint times must be distinct")
        self.waypoints = wps
        self.length = int(length)
        self._times = np.array([w.t for w in wps], dtype=float)
        self._pos = np.stack([np.asarray(w.position, dtype=float) for w in wps])
        self._grip = np.array([int(w.gripper) for w in wps])
        if len(wps) > 1:
            quats = np.stack([np.r_[w.rotation.quat[1:], w.rotation.quat[0]] for w in wps])
            self._slerp = Slerp(self._times, _SR.from_quat(quats))
        else:
            self._slerp = None
        self._states = np.stack([self._state(t) for t in range(self.length + 1)])

    def _state(self, t):
        tc = float(np.clip(t, self._times[0], self._times[-1]))
        pos = np.array([np.interp(tc, self._times, self._pos[:, i]) for i in range(3)])
        if self._slerp is None:
            R = self.waypoints[0].rotation.as_matrix()
        else:
            R = self._slerp([tc]).as_matrix()[0]
        grip = self._grip[np.searchsorted(self._times, tc, side="right") - 1]
        return np.concatenate([pos, matrix_to_rot6d(R), [float(grip)]])

    def state(self, t: int) -> np.ndarray:
        return self._states[int(np.clip(t, 0, self.length))]

    def pose(self, t: int) -> Pose:
        s = self.state(t)
        return Pose(s[:3], Rotation.from_matrix(rot6d_to_matrix(s[3:9])))


def get_action_chunk(script: EEScript, t: int, T: int) -> np.ndarray:
    """``p_{t+1} .. p_{t+T}`` (the action at step ``s`` is the next-step target)."""
    return np.stack([script.state(s) for s in range(t + 1, t + T + 1)])


class FlowScript:
    """Query points: object points that ride with the end effector between
    ``grasp_time`` and ``release_time``, plus static anchor points."""

    def __init__(self, object_points, ee: EEScript, grasp_time: int | None = None,
                 release_time: int | None = None, anchor_points=None):
        self.object_points = np.asarray(object_points, dtype=float).reshape(-1, 3)
        self.anchor_points = (np.zeros((0, 3)) if anchor_points is None
                              else np.asarray(anchor_points, dtype=float).reshape(-1, 3))
        if len(self.object_points) + len(self.anchor_points) < 1:
            raise ValueError("at least one query point required")
        self.ee = ee
        self.grasp_time = grasp_time
        self.release_time = release_time
        self._points = np.stack([self._at(t) for t in range(ee.length + 1)])

    @property
    def n_points(self) -> int:
        return len(self.object_points) + len(self.anchor_points)

    def object_transform(self, t: int) -> np.ndarray:
        """World transform applied to the object's initial configuration at ``t``."""
        if self.grasp_time is None or t < self.grasp_time:
            return np.eye(4)
        s = t if self.release_time is None else min(t, self.release_time)
        g = self.ee.pose(self.grasp_time).as_matrix()
        return self.ee.pose(s).as_matrix() @ np.linalg.inv(g)

    def _at(self, t):
        M = self.object_transform(t)
        obj = self.object_points @ M[:3, :3].T + M[:3, 3]
        return np.vstack([obj, self.anchor_points])

    def points(self, t: int) -> np.ndarray:
        return self._points[int(np.clip(t, 0, self.ee.length))]


def get_future_flow(flow: FlowScript, t: int, T: int) -> QueryPointSet:
    return QueryPointSet(np.stack([flow.points(s) for s in range(t + 1, t + T + 1)]))


@dataclass(frozen=True)
class RobotProxy:
    base: np.ndarray
    radius: float = 0.03
    segments: int = 12
    rings: int = 3

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("capsule radius must be positive")
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))


def build_robot_meshes(proxy: RobotProxy, actions) -> list[TriMesh]:
    """One capsule per future step, from the base to the action's position."""
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    return [capsule_mesh(proxy.base, a[:3], proxy.radius, proxy.segments, proxy.rings)
            for a in actions]


@dataclass
class HeadDemoConfig:
    """Noisy look-at controller standing in for recorded human head motion.

    Each demo draws one head offset for the whole episode plus a slowly
    wandering jitter, and looks at a blend of the end effector and
    ``look_target``.
    """

    n_demos: int = 32
    head_position: tuple = (0.05, -0.55, 0.6)
    offset_std: tuple = (0.25, 0.12, 0.1)
    wander_std: float = 0.01
    look_target: tuple = (0.0, 0.15, 0.05)
    ee_weight: float = 0.7
    look_noise: float = 0.03
    shrinkage: float = 0.05

    def generate(self, ee: EEScript, rng) -> np.ndarray:
        """``(n_demos, length + 1, 9)`` pose vectors for steps ``0..length``."""
        L = ee.length
        out = np.empty((self.n_demos, L + 1, 9))
        base = np.asarray(self.head_position, dtype=float)
        tgt = np.asarray(self.look_target, dtype=float)
        for j in range(self.n_demos):
            offset = rng.normal(0.0, 1.0, 3) * np.asarray(self.offset_std)
            wander = np.cumsum(rng.normal(0.0, self.wander_std, (L + 1, 3)), axis=0)
            gaze = rng.normal(0.0, self.look_noise, 3)
            for t in range(L + 1):
                eye = base + offset + wander[t]
                focus = self.ee_weight * ee.state(t)[:3] + (1 - self.ee_weight) * tgt + gaze
                p = look_at(eye, focus)
                out[j, t, :3] = p.position
                out[j, t, 3:] = p.rotation.as_rot6d()
        return out


@dataclass
class Scene:
    intrinsics: CameraIntrinsics
    env_meshes: list
    initial_camera: Pose
    episode_length: int
    object_mesh: TriMesh | None = None
    include_object_in_env: bool = False
    bounds: tuple | None = None
    fixed_views: list = field(default_factory=list)

    def environment(self) -> list:
        meshes = list(self.env_meshes)
        if self.include_object_in_env and self.object_mesh is not None:
            meshes.append(self.object_mesh)
        return meshes


@dataclass
class Scenario:
    """Everything needed to run an episode besides planner and reward configs."""

    scene: Scene
    ee: EEScript
    flow: FlowScript
    proxy: RobotProxy
    demos: HeadDemoConfig = field(default_factory=HeadDemoConfig)


@dataclass(frozen=True)
class LoopConfig:
    T: int = 24
    H: int = 12
    history: int = 4
    slew_bound: float = 0.15

    def __post_init__(self):
        if not 1 <= self.H <= self.T:
            raise ValueError("need 1 <= H <= T")


@dataclass
class RewardConfig:
    weights: RewardWeights = field(default_factory=RewardWeights)
    perturb: PerturbationConfig = field(default_factory=PerturbationConfig)
    eps: float = DEFAULT_EPS


@dataclass
class EpisodeResult:
    logs: list
    planning_calls: int
    seed: int
    mode: str
    planned: list = field(default_factory=list, repr=False)
    error: str | None = None

    def mean(self, key: str = "r_vis") -> float:
        return float(np.mean([r[key] for r in self.logs])) if self.logs else float("nan")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.logs)


def _window_prior(demos, t, T, shrinkage):
    L = demos.shape[1] - 1
    idx = np.clip(np.arange(t + 1, t + T + 1), 0, L)
    return fit_demo_prior(demos[:, idx].reshape(len(demos), -1), shrinkage=shrinkage)


class TrajectoryReward:
    """Composite reward over flat trajectory vectors, batched via ``batch``."""

    def __init__(self, model: RewardModel):
        self.model = model

    def batch(self, X):
        R, t, _ = decode_arrays(X)
        return self.model.total(R, t)

    def __call__(self, x):
        return float(self.batch(np.asarray(x)[None])[0])


def _seed_tree(seed: int, n_chunks: int):
    """Per-chunk (planner, perturbation) seeds derived from the episode seed."""
    ss = np.random.SeedSequence(seed)
    demo_ss, *chunk_ss = ss.spawn(n_chunks + 1)
    chunks = [tuple(int(s.generate_state(1)[0]) for s in c.spawn(2)) for c in chunk_ss]
    return demo_ss, chunks


def run_episode(scenario: Scenario, planner: SvddConfig, reward: RewardConfig = None,
                loop: LoopConfig = LoopConfig(), seed: int = 0, prior_fn=None) -> EpisodeResult:
    """Run one seeded episode.

    ``prior_fn(t, T, history)``, when given, replaces the demo-fitted view
    prior for the chunk starting at ``t``.
    """
    reward = RewardConfig() if reward is None else reward
    sc = scenario.scene
    L, T, H = sc.episode_length, loop.T, loop.H
    n_chunks = math.ceil(L / H)
    demo_ss, chunk_seeds = _seed_tree(seed, n_chunks)
    demos = scenario.demos.generate(scenario.ee, np.random.default_rng(demo_ss))
    env = sc.environment()
    history = deque([sc.initial_camera], maxlen=loop.history)
    prev_pos = sc.initial_camera.position
    logs, planned = [], []
    result = EpisodeResult(logs, 0, seed, planner.mode, planned)

    t = 0
    chunk = 0
    while t < L:
        plan_seed, perturb_seed = chunk_seeds[chunk]
        try:
            actions = get_action_chunk(scenario.ee, t, T)
            qps = get_future_flow(scenario.flow, t, T)
            robot = build_robot_meshes(scenario.proxy, actions)
            occ = Occluders.build(env, robot)
            perturb = PerturbationConfig(reward.perturb.J, reward.perturb.sigma_pos,
                                         reward.perturb.sigma_rot, perturb_seed)
            model = RewardModel(sc.intrinsics, qps, actions[:, :3], occ, reward.weights, perturb, reward.eps)
            if prior_fn is None:
                prior = _window_prior(demos, t, T, scenario.demos.shrinkage)
            else:
                prior = prior_fn(t, T, tuple(history))
            cfg = SvddConfig(planner.alpha, planner.M, planner.K, planner.stride, planner.mode,
                             plan_seed, planner.corrupt_weights)
            sample = rew_max_diff(prior, cfg, TrajectoryReward(model))
        except Exception as exc:  # partial log is still useful to the caller
            log.exception("planning failed at t=%d", t)
            result.error = f"t={t}: {type(exc).__name__}: {exc}"
            break
        result.planning_calls += 1
        R, pos, bad = decode_arrays(sample.values)
        planned.append(sample.values)
        n_exec = min(H, L - t)
        for j in range(n_exec):
            s = t + 1 + j
            rec = _step_record(sc, scenario, env, s, R[j], pos[j], reward, perturb_seed, j)
            slew = float(np.linalg.norm(pos[j] - prev_pos))
            rec.update(mode=planner.mode, chunk_index=chunk, seed=seed,
                       slew=slew, slew_exceeded=bool(slew > loop.slew_bound),
                       rot_fallback=bool(bad[j]))
            logs.append(rec)
            prev_pos = pos[j]
            history.append(Pose(pos[j], Rotation.from_matrix(R[j])))
        t += H
        chunk += 1
    return result


def _step_record(sc, scenario, env, s, R, pos, reward, perturb_seed, j):
    """Reward terms for one executed pose at global step ``s``."""
    action = scenario.ee.state(s)
    qps = QueryPointSet(scenario.flow.points(s)[None])
    occ = Occluders.build(env, build_robot_meshes(scenario.proxy, action[None]))
    perturb = PerturbationConfig(reward.perturb.J, reward.perturb.sigma_pos,
                                 reward.perturb.sigma_rot, perturb_seed + 7919 * (j + 1))
    model = RewardModel(sc.intrinsics, qps, action[None, :3], occ, reward.weights, perturb, reward.eps)
    out = model.terms(R[None, None], pos[None, None])
    quat = Rotation.from_matrix(R).quat
    return {
        "t": int(s),
        "pose": {"pos": [float(v) for v in pos], "quat_wxyz": [float(v) for v in quat]},
        "r_vis": float(out["r_vis"][0]),
        "r_close": float(out["r_close"][0]),
        "r_marg": float(out["r_marg"][0]),
        "r_safe": float(out["r_safe"][0]),
        "total": float(out["total"][0]),
        "vis_bits": [int(b) for b in out["vis_bits"][0, 0]],
    }
