"""Authored scenes.

``occluder_benchmark`` is a pick-and-place on a table: the arm carries a
small block from the left of the table into an open-top basket on the
right. Six query points are tracked, four on the block and two on the
basket floor. The basket walls, a tall box standing between the two sites,
and the arm itself each hide some of the points from typical viewpoints.
The scene is defined by the packaged ``occluder_benchmark.json`` config.
"""

from __future__ import annotations

import numpy as np

from .geom3d import look_at

TABLE_CENTER = np.array([0.0, 0.15, 0.05])


def ring_views(center, radius, height, n, phase=0.0):
    """``n`` poses evenly spaced on a horizontal circle, all looking at ``center``."""
    center = np.asarray(center, dtype=float)
    views = []
    for k in range(n):
        a = phase + 2 * np.pi * k / n
        eye = center + np.array([radius * np.cos(a), radius * np.sin(a), 0.0])
        eye[2] = height
        views.append(look_at(eye, center))
    return views


def occluder_benchmark():
    """The benchmark :class:`~visplan.simworld.Scenario`."""
    from .config import build_scenario, packaged_config
    return build_scenario(packaged_config())
