"""
The occluder benchmark, one seed
================================

A block is carried into a basket past a tall box. First we check how well
four fixed cameras cover the task. Then one episode runs with the guided
planner and one with the unguided prior, on the same seed.
"""

import numpy as np

from visplan.config import Bundle, packaged_config, planner_config
from visplan.coverage import coverage_study
from visplan.simworld import run_episode

cfg = packaged_config()
b = Bundle.from_config(cfg)

###############################################################################
# Fixed views: fraction of time each keeps at least 70% of the points visible.

cov = coverage_study(b.scenario, theta=0.7)
for vid, c in zip(cov.sorted().view_ids, cov.sorted().C):
    print(f"fixed view {vid}: C = {c:.3f}")

###############################################################################
# Planned views, one episode each.

for mode in ("svdd", "prior_only"):
    res = run_episode(b.scenario, planner_config(cfg, mode), b.reward, b.loop, seed=0)
    r = np.array([rec["r_vis"] for rec in res.logs])
    print(f"{mode:10s} mean r_vis {r.mean():.3f}  min {r.min():.2f}  "
          f"planning calls {res.planning_calls}")
