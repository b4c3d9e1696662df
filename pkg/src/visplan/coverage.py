"""Fixed-view coverage and planner comparisons.

For a fixed camera ``v`` and time ``t``, ``k[v, t]`` is the fraction of the
valid query points that the camera sees. A view's coverage is the fraction
of time steps with ``k[v, t] >= theta``.

Heatmaps use a two-colour ramp from dark green (low) to yellow (high).
Pass ``deterministic=True`` to the SVG writers to get byte-stable files
(no timestamp, fixed element ids).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geom3d import CameraIntrinsics, Pose
from .meshkit import DEFAULT_EPS, Occluders
from .scenes import ring_views
from .simworld import LoopConfig, RewardConfig, Scenario, build_robot_meshes, run_episode
from .svdd import SvddConfig
from .visibility import visibility_bits

DEFAULT_THETA = 0.7
RAMP = ("#0b4d1e", "#ffe31a")  # dark green -> yellow


@dataclass(frozen=True)
class FixedViewGrid:
    poses: tuple

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise ValueError("need at least one view")
        for p in poses:
            if not (np.all(np.isfinite(p.position)) and np.all(np.isfinite(p.rotation.quat))):
                raise ValueError("view poses must be finite")
        object.__setattr__(self, "poses", poses)

    @classmethod
    def ring(cls, center, radius: float, heights, n_per_ring: int, phase: float = 0.0):
        """Views on horizontal rings around ``center``, all looking at it."""
        heights = np.atleast_1d(heights)
        return cls(tuple(p for h in heights for p in ring_views(center, radius, h, n_per_ring, phase)))

    def __len__(self):
        return len(self.poses)

    def arrays(self):
        R = np.stack([p.rotation.as_matrix() for p in self.poses])
        t = np.stack([p.position for p in self.poses])
        return R, t


def visibility_fraction(pose: Pose, intr: CameraIntrinsics, points, occ: Occluders | None = None,
                        valid=None, step: int = 0, eps: float = DEFAULT_EPS) -> float:
    """Fraction of the valid points in ``points (N, 3)`` seen from ``pose``.

    ``step`` picks the robot meshes of ``occ`` to test against. Returns 0
    when no point is valid.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    valid = np.ones(len(points), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not valid.any():
        return 0.0
    R = np.repeat(pose.rotation.as_matrix()[None], step + 1, axis=0)
    t = np.repeat(pose.position[None], step + 1, axis=0)
    pts = np.zeros((step + 1,) + points.shape)
    pts[step] = points
    bits = visibility_bits(R, t, intr, pts, occ, eps)[step]
    return float(bits[valid].mean())


def coverage(k_row, theta: float = DEFAULT_THETA) -> float:
    """Fraction of entries with ``k >= theta``."""
    k_row = np.asarray(k_row, dtype=float)
    if k_row.size == 0:
        raise ValueError("empty visibility row")
    return float(np.count_nonzero(k_row >= theta)) / k_row.size


@dataclass
class CoverageMatrix:
    """``k[v, t]`` for views ``view_ids`` and steps ``times``."""

    k: np.ndarray
    theta: float = DEFAULT_THETA
    view_ids: np.ndarray = None
    times: np.ndarray = None

    def __post_init__(self):
        self.k = np.atleast_2d(np.asarray(self.k, dtype=float))
        V, T = self.k.shape
        if np.any((self.k < 0) | (self.k > 1)):
            raise ValueError("visibility fractions must lie in [0, 1]")
        self.view_ids = np.arange(V) if self.view_ids is None else np.asarray(self.view_ids, dtype=int)
        self.times = np.arange(1, T + 1) if self.times is None else np.asarray(self.times, dtype=int)

    @property
    def C(self) -> np.ndarray:
        return np.count_nonzero(self.k >= self.theta, axis=1) / self.k.shape[1]

    def order(self) -> np.ndarray:
        """Row order by descending coverage, ties by ascending view id."""
        return np.lexsort((self.view_ids, -self.C))

    def sorted(self) -> "CoverageMatrix":
        o = self.order()
        return CoverageMatrix(self.k[o], self.theta, self.view_ids[o], self.times)

    def to_csv(self) -> str:
        """Rows are views in sorted order; columns are ``view, C`` then one per step."""
        m = self.sorted()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["view", f"C@{m.theta!r}"] + [f"t{t}" for t in m.times])
        for vid, c, row in zip(m.view_ids, m.C, m.k):
            w.writerow([int(vid), repr(float(c))] + [repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CoverageMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[0] != "view" or not header[1].startswith("C@"):
            raise ValueError("not a coverage CSV")
        theta = float(header[1][2:])
        times = [int(h[1:]) for h in header[2:]]
        ids = [int(r[0]) for r in body]
        k = np.array([[float(x) for x in r[2:]] for r in body]).reshape(len(body), len(times))
        return cls(k, theta, np.array(ids, dtype=int), np.array(times, dtype=int))

    def to_dict(self) -> dict:
        return {"theta": self.theta,
                "view_ids": self.view_ids.tolist(),
                "coverage": self.C.tolist(),
                "order": self.view_ids[self.order()].tolist()}


def coverage_study(scenario: Scenario, views: FixedViewGrid | None = None,
                   theta: float = DEFAULT_THETA, eps: float = DEFAULT_EPS) -> CoverageMatrix:
    """Visibility fractions of every fixed view over the whole episode.

    Occluders at step ``t`` are the environment plus the robot capsule at
    its scripted pose for that step.
    """
    sc = scenario.scene
    views = FixedViewGrid(tuple(sc.fixed_views)) if views is None else views
    R, pos = views.arrays()
    env = sc.environment()
    L = sc.episode_length
    k = np.zeros((len(views), L))
    for j, t in enumerate(range(1, L + 1)):
        robot = build_robot_meshes(scenario.proxy, scenario.ee.state(t)[None])
        occ = Occluders.build(env, robot)
        pts = scenario.flow.points(t)[None]
        bits = visibility_bits(R[:, None], pos[:, None], sc.intrinsics, pts, occ, eps)
        k[:, j] = bits[:, 0].mean(axis=-1)
    return CoverageMatrix(k, theta, times=np.arange(1, L + 1))


# -- planner comparison -------------------------------------------------------

@dataclass
class ModeStats:
    name: str
    seeds: list
    per_seed: list

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_seed))

    @property
    def se(self) -> float:
        n = len(self.per_seed)
        return float(np.std(self.per_seed, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    def to_dict(self) -> dict:
        return {"mean_r_vis": self.mean, "se": self.se, "n": len(self.per_seed),
                "seeds": list(self.seeds), "per_seed": list(self.per_seed)}


@dataclass
class ComparisonReport:
    modes: dict
    coverage: CoverageMatrix | None = None
    episodes: dict = field(default_factory=dict, repr=False)

    def wins(self, a: str, b: str) -> int:
        """Seeds on which mode ``a`` strictly beats mode ``b``."""
        return int(np.sum(np.array(self.modes[a].per_seed) > np.array(self.modes[b].per_seed)))

    def summary(self) -> dict:
        out = {"modes": {k: m.to_dict() for k, m in self.modes.items()}}
        if self.coverage is not None:
            out["coverage"] = self.coverage.to_dict()
        return out

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "n", "mean_r_vis", "se"])
        for name, m in self.modes.items():
            w.writerow([name, len(m.per_seed), repr(m.mean), repr(m.se)])
        return buf.getvalue()


def _episode(args):
    scenario, cfg, reward, loop, seed = args
    return run_episode(scenario, cfg, reward, loop, seed)


def compare_planners(scenario: Scenario, planners: dict, seeds, reward: RewardConfig | None = None,
                     loop: LoopConfig = LoopConfig(), theta: float = DEFAULT_THETA,
                     with_coverage: bool = True, workers: int = 1) -> ComparisonReport:
    """Run every planner config on every seed and aggregate executed ``r_vis``.

    ``planners`` maps a display name to an :class:`SvddConfig`. With
    ``workers > 1`` episodes run in separate processes; results do not
    depend on the worker count since each episode is seeded on its own.
    """
    seeds = [int(s) for s in seeds]
    jobs = [(name, s) for name in planners for s in seeds]
    args = [(scenario, planners[name], reward, loop, s) for name, s in jobs]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_episode, args))
    else:
        results = [_episode(a) for a in args]
    episodes = {job: res for job, res in zip(jobs, results)}
    for (name, s), res in episodes.items():
        if res.error:
            raise RuntimeError(f"{name} seed {s}: {res.error}")
    modes = {name: ModeStats(name, seeds, [episodes[(name, s)].mean("r_vis") for s in seeds])
             for name in planners}
    cov = coverage_study(scenario, theta=theta) if with_coverage and scenario.scene.fixed_views else None
    return ComparisonReport(modes, cov, episodes)


# -- plots --------------------------------------------------------------------

def _pyplot(deterministic: bool):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    if deterministic:
        matplotlib.rcParams["svg.hashsalt"] = "visplan"
    return plt


def _save_svg(fig, path, deterministic):
    meta = {"Date": None} if deterministic else {}
    fig.savefig(path, format="svg", metadata=meta)


def heatmap_svg(matrix: CoverageMatrix, path, deterministic: bool = False) -> None:
    plt = _pyplot(deterministic)
    from matplotlib.colors import LinearSegmentedColormap
    m = matrix.sorted()
    cmap = LinearSegmentedColormap.from_list("green_yellow", RAMP)
    fig, ax = plt.subplots(figsize=(8, 1 + 0.4 * len(m.view_ids)))
    im = ax.imshow(m.k, aspect="auto", cmap=cmap, vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_yticks(range(len(m.view_ids)))
    ax.set_yticklabels([f"view {v} (C={c:.2f})" for v, c in zip(m.view_ids, m.C)])
    ax.set_xlabel("time step")
    fig.colorbar(im, ax=ax, label="visible fraction")
    fig.tight_layout()
    _save_svg(fig, path, deterministic)
    plt.close(fig)


def bars_svg(report: ComparisonReport, path, deterministic: bool = False) -> None:
    plt = _pyplot(deterministic)
    names = list(report.modes)
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(names, [report.modes[n].mean for n in names],
           yerr=[report.modes[n].se for n in names], color=RAMP[0], capsize=4)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mean executed r_vis")
    fig.tight_layout()
    _save_svg(fig, path, deterministic)
    plt.close(fig)


def write_report(report: ComparisonReport, out_dir, deterministic: bool = False) -> dict:
    """Write CSV tables, SVG plots and ``summary.json``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"table": os.path.join(out_dir, "comparison.csv"),
             "bars": os.path.join(out_dir, "comparison.svg"),
             "summary": os.path.join(out_dir, "summary.json")}
    with open(paths["table"], "w") as fh:
        fh.write(report.table_csv())
    bars_svg(report, paths["bars"], deterministic)
    if report.coverage is not None:
        paths.update(write_coverage(report.coverage, out_dir, deterministic))
    with open(paths["summary"], "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
    return paths


def write_coverage(matrix: CoverageMatrix, out_dir, deterministic: bool = False) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {"coverage_csv": os.path.join(out_dir, "coverage.csv"),
             "coverage_svg": os.path.join(out_dir, "coverage.svg")}
    with open(paths["coverage_csv"], "w") as fh:
        fh.write(matrix.to_csv())
    heatmap_svg(matrix, paths["coverage_svg"], deterministic)
    return paths
