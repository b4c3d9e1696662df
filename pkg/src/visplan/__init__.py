"""Visibility-aware camera viewpoint planning.

Camera trajectories are drawn from a Gaussian view prior by a diffusion
sampler whose reverse steps are resampled by a raycast visibility reward.
"""

__version__ = "0.1.0"
