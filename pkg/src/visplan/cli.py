"""Command-line entry point.

Subcommands::

    visplan run [CONFIG]          episodes over the config's seed list
    visplan coverage [CONFIG]     fixed-view coverage and planner comparison
    visplan verify-svdd [CONFIG]  sampler checks against analytic answers
    visplan bench [CONFIG]        raycast and planner timings

Without CONFIG the packaged occluder benchmark is used. Exit status is 0
on success, 1 on a runtime failure and 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as C
from .bench import run_bench
from .coverage import compare_planners, coverage_study, write_coverage, write_report
from .simworld import run_episode
from .verify import battery_from_section, run_battery

log = logging.getLogger("visplan")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _load(args):
    if args.config is None:
        cfg = C.apply_overrides(C.packaged_config(), args.set)
        C.validate(cfg)
        base = "."
    else:
        cfg, base = C.load(args.config, args.set)
    return cfg, base


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(args) -> int:
    cfg, base = _load(args)
    b = C.Bundle.from_config(cfg, base)
    seeds = C.seed_list(cfg, args.seed)
    os.makedirs(args.out, exist_ok=True)
    per_seed, failed = [], []
    for s in seeds:
        res = run_episode(b.scenario, b.planner, b.reward, b.loop, seed=s)
        path = os.path.join(args.out, f"episode_seed{s}.jsonl")
        with open(path, "w") as fh:
            fh.write(res.to_jsonl())
        entry = {"seed": s, "mean_r_vis": res.mean("r_vis"), "mean_total": res.mean("total"),
                 "planning_calls": res.planning_calls, "steps": len(res.logs), "log": os.path.basename(path)}
        if res.error:
            entry["error"] = res.error
            failed.append(s)
        per_seed.append(entry)
        log.info("seed %d: mean r_vis %.4f", s, entry["mean_r_vis"])
    vals = np.array([e["mean_r_vis"] for e in per_seed])
    summary = {"mode": b.planner.mode, "seeds": seeds, "episodes": per_seed,
               "mean_r_vis": float(vals.mean()),
               "se_r_vis": float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0,
               "failed_seeds": failed}
    _write_json(os.path.join(args.out, "summary.json"), summary)
    print(f"{b.planner.mode}: mean r_vis {summary['mean_r_vis']:.4f} over {len(seeds)} seed(s)")
    if failed:
        print(f"episodes failed for seeds {failed}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_coverage(args) -> int:
    cfg, base = _load(args)
    b = C.Bundle.from_config(cfg, base)
    sec = cfg.get("coverage", {})
    theta = sec.get("theta", 0.7)
    if not b.scenario.scene.fixed_views:
        raise C.ConfigError("scene.fixed_views", "coverage needs at least one fixed view")
    if args.views_only:
        m = coverage_study(b.scenario, theta=theta)
        write_coverage(m, args.out, args.deterministic)
        _write_json(os.path.join(args.out, "summary.json"), {"coverage": m.to_dict()})
    else:
        planners = {mode: C.planner_config(cfg, mode) for mode in sec.get("modes", ["svdd", "prior_only"])}
        rep = compare_planners(b.scenario, planners, C.seed_list(cfg, args.seed), b.reward, b.loop,
                               theta, workers=sec.get("workers", 1))
        write_report(rep, args.out, args.deterministic)
        m = rep.coverage
        for name, st in rep.modes.items():
            print(f"{name}: mean r_vis {st.mean:.4f} +/- {st.se:.4f} (n={len(st.per_seed)})")
    for vid, c in zip(m.sorted().view_ids, m.sorted().C):
        print(f"view {vid}: C={c:.4f}")
    return EXIT_OK


def cmd_verify_svdd(args) -> int:
    cfg, _ = _load(args)
    alphas = None if args.alphas is None else tuple(float(a) for a in args.alphas.split(","))
    bc = battery_from_section(cfg.get("verify"), alphas=alphas, seed=args.seed,
                              corrupt_weights=True if args.corrupt_weights else None)
    results = run_battery(bc)
    for r in results:
        print(r.line())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "verify.json"),
                    [{"name": r.name, "status": r.status, "stats": r.stats} for r in results])
    return EXIT_OK if all(r.ok for r in results) else EXIT_RUNTIME


def cmd_bench(args) -> int:
    cfg, base = _load(args)
    b = C.Bundle.from_config(cfg, base)
    out = run_bench(b, cfg.get("bench"), seed=args.seed or 0)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "bench.json"), out)
    rc = out["raycast"]
    print(f"raycast: bvh {rc['bvh_segments_per_s']:.0f} seg/s, brute {rc['brute_segments_per_s']:.0f} seg/s, "
          f"speedup {rc['speedup']:.2f}, agree={rc['agree']}")
    for p in out["planner"]:
        print(f"planner M={p['M']} K={p['K']}: {p['seconds_per_chunk']:.3f} s/chunk")
    return EXIT_OK if rc["agree"] else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="visplan", description="Visibility-aware camera planning with reward-guided diffusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("config", nargs="?", help="JSON config (default: packaged benchmark)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config leaf by dotted path, e.g. planner.alpha=0.05")
        p.add_argument("--seed", type=int, default=None, help="base seed (replaces the config's seed list start)")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="strip timestamps from SVG output so reruns are byte-identical")
        p.add_argument("-v", "--verbose", action="count", default=0)

    common(sub.add_parser("run", help="run episodes and write JSONL logs"), "runs")
    p = sub.add_parser("coverage", help="fixed-view coverage and planner comparison")
    common(p, "coverage")
    p.add_argument("--views-only", action="store_true", help="skip the planner comparison")
    p = sub.add_parser("verify-svdd", help="check the sampler against analytic answers")
    common(p, None)
    p.add_argument("--alphas", help="comma-separated alpha list for the monotonicity check")
    p.add_argument("--corrupt-weights", action="store_true",
                   help="negative control: invert the resampling weights (the battery should fail)")
    common(sub.add_parser("bench", help="raycast and planner timings"), "bench")
    return parser


COMMANDS = {"run": cmd_run, "coverage": cmd_coverage, "verify-svdd": cmd_verify_svdd, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
