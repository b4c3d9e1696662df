"""Run configuration: one JSON document per run.

The document has the sections ``scene``, ``ee_script``, ``flow_script``,
``planner``, ``reward`` and ``seeds``, plus optional ``coverage``,
``verify`` and ``bench`` sections read by the matching CLI subcommands.
The schema lives in ``visplan/data/config.schema.json``; unknown keys are
rejected everywhere. Leaf values can be overridden with dotted paths, e.g.
``planner.alpha=0.05`` or ``seeds.count=20``.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from .geom3d import CameraIntrinsics, Pose, Rotation, look_at
from .meshkit import box_mesh, cylinder_mesh, env_path, load_obj, quad_mesh
from .scenes import ring_views
from .simworld import (EEScript, FlowScript, HeadDemoConfig, LoopConfig, RewardConfig, RobotProxy,
                       Scenario, Scene, Waypoint)
from .svdd import SvddConfig
from .visibility import PerturbationConfig, RewardWeights

BENCHMARK = "occluder_benchmark.json"


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted location of the problem."""

    def __init__(self, path: str, message: str):
        self.path = path or "<root>"
        super().__init__(f"{self.path}: {message}")


def schema() -> dict:
    return json.loads(resources.files("visplan").joinpath("data/config.schema.json").read_text())


def packaged_config(name: str = BENCHMARK) -> dict:
    return json.loads(resources.files("visplan").joinpath("data", name).read_text())


def _dotted(path) -> str:
    return ".".join(str(p) for p in path)


def validate(cfg: dict) -> None:
    """Schema check followed by cross-field checks; raises :class:`ConfigError`."""
    v = jsonschema.Draft202012Validator(schema())
    errors = sorted(v.iter_errors(cfg), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        # the deepest error usually names the offending leaf
        err = max(errors, key=lambda e: len(e.absolute_path))
        if err.context:
            err = max(err.context, key=lambda e: len(e.absolute_path))
        raise ConfigError(_dotted(err.absolute_path), err.message)
    pl = cfg["planner"]
    if pl.get("H", 12) > pl.get("T", 24):
        raise ConfigError("planner.H", "H must not exceed T")
    times = [w["t"] for w in cfg["ee_script"]["waypoints"]]
    if len(set(times)) != len(times):
        raise ConfigError("ee_script.waypoints", "waypoint times must be distinct")
    intr = cfg["scene"]["intrinsics"]
    if not (0 <= intr["cx"] < intr["width"] and 0 <= intr["cy"] < intr["height"]):
        raise ConfigError("scene.intrinsics", "principal point outside the image")
    fl = cfg["flow_script"]
    if not fl.get("object_points") and not fl.get("anchor_points"):
        raise ConfigError("flow_script", "at least one query point required")


def load(path, overrides=()) -> tuple[dict, str]:
    """Read, override and validate a config file; returns ``(cfg, base_dir)``."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    cfg = apply_overrides(cfg, overrides)
    validate(cfg)
    return cfg, os.path.dirname(os.path.abspath(path))


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` strings; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        key, text = item.split("=", 1)
        parts = key.split(".")
        node = cfg
        for i, p in enumerate(parts[:-1]):
            if isinstance(node, list):
                node = node[_index(parts[:i + 1], node)]
            else:
                node = node.setdefault(p, {})
            if not isinstance(node, (dict, list)):
                raise ConfigError(".".join(parts[:i + 1]), "not a section")
        last = parts[-1]
        if isinstance(node, list):
            node[_index(parts, node)] = _parse_value(text)
        else:
            node[last] = _parse_value(text)
    return cfg


def _index(parts, lst):
    try:
        i = int(parts[-1])
    except ValueError:
        raise ConfigError(".".join(parts), "list index must be an integer") from None
    if not -len(lst) <= i < len(lst):
        raise ConfigError(".".join(parts), "list index out of range")
    return i


# -- building objects ------------------------------------------------------------

def _rotation(spec) -> Rotation:
    if "quat_wxyz" in spec:
        return Rotation(np.asarray(spec["quat_wxyz"], dtype=float))
    if "matrix" in spec:
        return Rotation.from_matrix(np.asarray(spec["matrix"], dtype=float))
    return Rotation.from_rotvec(np.asarray(spec["rotvec"], dtype=float))


def _pose(spec) -> Pose:
    if "eye" in spec:
        return look_at(spec["eye"], spec["target"], spec.get("up", (0.0, 0.0, 1.0)))
    return Pose(np.asarray(spec["pos"], dtype=float), _rotation(spec["rotation"]))


def _mesh(spec, base_dir):
    kind = spec["type"]
    if kind == "box":
        return box_mesh(spec["center"], spec["size"])
    if kind == "quad":
        return quad_mesh(spec["center"], spec["size"], spec.get("axis", 2))
    if kind == "cylinder":
        return cylinder_mesh(spec["center"], spec["radius"], spec["height"], spec.get("segments", 16))
    return load_obj(env_path(base_dir, spec["path"]))


def build_scenario(cfg: dict, base_dir: str = ".") -> Scenario:
    s = cfg["scene"]
    intr = CameraIntrinsics(**s["intrinsics"])
    meshes = [_mesh(m, base_dir) for m in s["meshes"]]
    obj = _mesh(s["object"], base_dir) if "object" in s else None
    L = s["episode_length"]
    bounds = None
    if "bounds" in s:
        lo, hi = np.asarray(s["bounds"]["lo"], float), np.asarray(s["bounds"]["hi"], float)
        for i, m in enumerate(meshes):
            mlo, mhi = m.bounds()
            if np.any(mlo < lo - 1e-9) or np.any(mhi > hi + 1e-9):
                raise ConfigError(f"scene.meshes.{i}", "mesh extends outside scene.bounds")
        bounds = (lo, hi)
    fv = s.get("fixed_views", [])
    if isinstance(fv, dict):
        r = fv["ring"]
        views = [p for h in r["heights"]
                 for p in ring_views(r["center"], r["radius"], h, r["n"], r.get("phase", 0.0))]
    else:
        views = [_pose(p) for p in fv]
    scene = Scene(intr, meshes, _pose(s["initial_camera"]), L, object_mesh=obj,
                  include_object_in_env=s.get("include_object_in_env", False),
                  bounds=bounds, fixed_views=views)
    wps = [Waypoint(w["t"], np.asarray(w["position"], float), _rotation(w["rotation"]), w.get("gripper", 0))
           for w in cfg["ee_script"]["waypoints"]]
    ee = EEScript(wps, L)
    fl = cfg["flow_script"]
    flow = FlowScript(fl.get("object_points", []), ee, fl.get("grasp_time"), fl.get("release_time"),
                      fl.get("anchor_points"))
    rb = s["robot"]
    proxy = RobotProxy(np.asarray(rb["base"], float), rb.get("radius", 0.03),
                       rb.get("segments", 12), rb.get("rings", 3))
    vp = cfg["planner"].get("view_prior", {})
    demos = HeadDemoConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in vp.items()})
    return Scenario(scene, ee, flow, proxy, demos)


def planner_config(cfg: dict, mode: str | None = None, seed: int = 0) -> SvddConfig:
    p = cfg["planner"]
    return SvddConfig(alpha=p.get("alpha", 0.1), M=p.get("M", 16), K=p.get("K", 100),
                      stride=p.get("stride", 1), mode=mode or p.get("mode", "svdd"), seed=seed)


def loop_config(cfg: dict) -> LoopConfig:
    p = cfg["planner"]
    return LoopConfig(T=p.get("T", 24), H=p.get("H", 12), history=p.get("history", 4),
                      slew_bound=p.get("slew_bound", 0.15))


def reward_config(cfg: dict) -> RewardConfig:
    r = cfg["reward"]
    w = RewardWeights(**{k: r[k] for k in ("lambda_c", "lambda_m", "lambda_s", "lambda_var", "sigma_safe")
                         if k in r})
    pc = PerturbationConfig(**{k: r[k] for k in ("J", "sigma_pos", "sigma_rot") if k in r})
    return RewardConfig(w, pc, r.get("eps", RewardConfig().eps))


def seed_list(cfg: dict, override: int | None = None) -> list[int]:
    """Seeds from the config; ``override`` shifts the whole list to start there."""
    s = cfg["seeds"]
    seeds = list(s) if isinstance(s, list) else list(range(s.get("start", 0), s.get("start", 0) + s["count"]))
    if override is not None:
        seeds = [override + i for i in range(len(seeds))]
    return seeds


@dataclass(frozen=True)
class Bundle:
    """Everything a subcommand needs, built from a validated config."""

    cfg: dict
    scenario: Scenario
    planner: SvddConfig
    loop: LoopConfig
    reward: RewardConfig

    @classmethod
    def from_config(cls, cfg: dict, base_dir: str = ".") -> "Bundle":
        try:
            return cls(cfg, build_scenario(cfg, base_dir), planner_config(cfg), loop_config(cfg),
                       reward_config(cfg))
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError("", str(exc)) from exc
