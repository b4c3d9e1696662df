"""Timing harness: raycast throughput and planner wall time per chunk."""

from __future__ import annotations

import platform
import time

import numpy as np

from .meshkit import Occluders, TriMesh, build_bvh, segments_hit, segments_hit_bruteforce
from .simworld import (TrajectoryReward, _window_prior, build_robot_meshes, get_action_chunk,
                       get_future_flow)
from .svdd import SvddConfig, rew_max_diff
from .visibility import PerturbationConfig, RewardModel

BENCH_SCHEMA = {
    "type": "object",
    "required": ["raycast", "planner", "platform"],
    "properties": {
        "raycast": {
            "type": "object",
            "required": ["triangles", "segments", "bvh_seconds", "brute_seconds",
                         "bvh_segments_per_s", "brute_segments_per_s", "speedup", "agree"],
            "properties": {"triangles": {"type": "integer"}, "segments": {"type": "integer"},
                           "bvh_seconds": {"type": "number"}, "brute_seconds": {"type": "number"},
                           "bvh_segments_per_s": {"type": "number"},
                           "brute_segments_per_s": {"type": "number"},
                           "speedup": {"type": "number"}, "agree": {"type": "boolean"}},
        },
        "planner": {
            "type": "array",
            "items": {"type": "object",
                      "required": ["M", "K", "N", "T", "seconds_per_chunk", "reward_evals"],
                      "properties": {"M": {"type": "integer"}, "K": {"type": "integer"},
                                     "N": {"type": "integer"}, "T": {"type": "integer"},
                                     "seconds_per_chunk": {"type": "number"},
                                     "reward_evals": {"type": "integer"}}},
        },
        "platform": {"type": "string"},
    },
}


def random_soup(n_tri: int, rng, extent: float = 1.0, size: float = 0.05) -> TriMesh:
    """``n_tri`` independent small triangles scattered in a cube."""
    centers = rng.uniform(-extent, extent, (n_tri, 1, 3))
    V = (centers + rng.normal(0.0, size, (n_tri, 3, 3))).reshape(-1, 3)
    return TriMesh(V, np.arange(3 * n_tri).reshape(-1, 3))


def random_segments(n: int, rng, extent: float = 1.2):
    return rng.uniform(-extent, extent, (n, 3)), rng.uniform(-extent, extent, (n, 3))


def bench_raycast(n_tri: int = 500, n_seg: int = 100_000, seed: int = 0, repeats: int = 1) -> dict:
    rng = np.random.default_rng(seed)
    mesh = random_soup(n_tri, rng)
    a, b = random_segments(n_seg, rng)
    bvh = build_bvh(mesh)
    t_bvh, t_bf = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        h1 = segments_hit(bvh, a, b)
        t_bvh.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        h2 = segments_hit_bruteforce(mesh, a, b)
        t_bf.append(time.perf_counter() - t0)
    tb, tf = min(t_bvh), min(t_bf)
    return {"triangles": n_tri, "segments": n_seg, "bvh_seconds": tb, "brute_seconds": tf,
            "bvh_segments_per_s": n_seg / tb, "brute_segments_per_s": n_seg / tf,
            "speedup": tf / tb, "agree": bool(np.array_equal(h1, h2))}


def bench_planner(bundle, Ms=(1, 16), K: int = 10, seed: int = 0, repeats: int = 1) -> list[dict]:
    """Wall time of one planning call on the first chunk of the bundle's scenario."""
    sc, loop = bundle.scenario, bundle.loop
    T = loop.T
    actions = get_action_chunk(sc.ee, 0, T)
    qps = get_future_flow(sc.flow, 0, T)
    occ = Occluders.build(sc.scene.environment(), build_robot_meshes(sc.proxy, actions))
    demos = sc.demos.generate(sc.ee, np.random.default_rng(seed))
    prior = _window_prior(demos, 0, T, sc.demos.shrinkage)
    r = bundle.reward
    out = []
    for M in Ms:
        times = []
        for _ in range(repeats):
            pc = PerturbationConfig(r.perturb.J, r.perturb.sigma_pos, r.perturb.sigma_rot, seed)
            model = RewardModel(sc.scene.intrinsics, qps, actions[:, :3], occ, r.weights, pc, r.eps)
            cfg = SvddConfig(alpha=bundle.planner.alpha, M=M, K=K, seed=seed)
            t0 = time.perf_counter()
            rew_max_diff(prior, cfg, TrajectoryReward(model))
            times.append(time.perf_counter() - t0)
        out.append({"M": int(M), "K": int(K), "N": int(qps.n_points), "T": int(T),
                    "seconds_per_chunk": min(times), "reward_evals": int(model.n_evals)})
    return out


def run_bench(bundle, section: dict | None = None, seed: int = 0) -> dict:
    s = section or {}
    return {
        "raycast": bench_raycast(s.get("triangles", 500), s.get("segments", 100_000), seed,
                                 s.get("repeats", 1)),
        "planner": bench_planner(bundle, s.get("M", [1, 16]), s.get("K", 10), seed, s.get("repeats", 1)),
        "platform": f"{platform.python_implementation()} {platform.python_version()} "
                    f"numpy {np.__version__}",
    }
