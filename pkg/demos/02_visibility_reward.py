"""
Scoring viewpoints with the visibility reward
=============================================

Two query points behind a wall. We score a few camera positions on
visibility, closeness, margin under pose noise and distance from the end
effector.
"""

import numpy as np

from visplan.geom3d import CameraIntrinsics, look_at
from visplan.meshkit import Occluders, quad_mesh
from visplan.visibility import PerturbationConfig, QueryPointSet, composite_reward

intr = CameraIntrinsics(fx=300.0, fy=300.0, cx=160.0, cy=120.0, width=320, height=240)

# a 0.6 m square wall standing in the plane y = 0.3
wall = quad_mesh([0.0, 0.3, 0.3], [0.6, 0.6], axis=1)
occ = Occluders.build([wall])

points = np.array([[0.0, 0.6, 0.1], [0.15, 0.65, 0.1]])
qps = QueryPointSet(points[None])
ee = np.array([[0.0, 0.5, 0.3]])
perturb = PerturbationConfig(J=8, seed=0)

###############################################################################
# A camera straight in front of the wall sees nothing. Moving it to the side
# or above restores the line of sight.

for name, eye in [("behind wall", [0.0, -0.5, 0.3]),
                  ("to the side", [0.9, 0.1, 0.3]),
                  ("overhead", [0.0, 0.5, 1.2])]:
    pose = look_at(eye, points.mean(0))
    out = composite_reward([pose], qps, ee, intr, occ, perturb_cfg=perturb)
    print(f"{name:12s} r_vis={out.r_vis:.2f} r_close={out.r_close:.3f} "
          f"r_marg={out.r_marg:.2f} r_safe={out.r_safe:.3f} total={out.total:.3f}")
