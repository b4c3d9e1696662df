"""Rigid transforms, rotation representations and pinhole projection.

Poses are camera-to-world (or body-to-world): a point ``p_c`` in the camera
frame maps to ``R @ p_c + t`` in the world. Cameras follow the OpenCV
convention (x right, y down, z forward).

The array helpers at the bottom of the module (``world_to_camera``,
``project_points``, ``in_fov_mask``) take stacked rotation matrices and
positions so that reward evaluation can run over many poses at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

DEPTH_EPS = 1e-12


class InvalidRotationError(ValueError):
    """Raised when a 6D rotation cannot be orthonormalized."""


class DegenerateProjectionError(ValueError):
    """Raised when a point lies on the camera plane (depth ~ 0)."""


def _canonical_quat(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise InvalidRotationError(f"quaternion with norm {n}")
    q = q / n
    if q[0] < 0:
        q = -q
    return q


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "quat", _canonical_quat(self.quat))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, R) -> "Rotation":
        x, y, z, w = _ScipyRotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
        return cls(np.array([w, x, y, z]))

    @classmethod
    def from_rotvec(cls, rotvec) -> "Rotation":
        x, y, z, w = _ScipyRotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_quat()
        return cls(np.array([w, x, y, z]))

    @classmethod
    def from_rot6d(cls, six) -> "Rotation":
        return cls.from_matrix(rot6d_to_matrix(six))

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        return _ScipyRotation.from_quat([x, y, z, w]).as_matrix()

    def as_rot6d(self) -> np.ndarray:
        return matrix_to_rot6d(self.as_matrix())

    def as_rotvec(self) -> np.ndarray:
        w, x, y, z = self.quat
        return _ScipyRotation.from_quat([x, y, z, w]).as_rotvec()

    def inverse(self) -> "Rotation":
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation.from_matrix(self.as_matrix() @ other.as_matrix())


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    rotation: Rotation = field(default_factory=Rotation.identity)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        object.__setattr__(self, "position", p)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), Rotation.identity())

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3], Rotation.from_matrix(T[:3, :3]))

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.as_matrix()
        T[:3, 3] = self.position
        return T

    def inverse(self) -> "Pose":
        R = self.rotation.as_matrix()
        return Pose(-R.T @ self.position, self.rotation.inverse())

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first, then ``self``."""
        R = self.rotation.as_matrix()
        return Pose(R @ other.position + self.position, self.rotation @ other.rotation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("image size must be integral")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def as_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                    width=int(self.width), height=int(self.height))


def transform_point(pose: Pose, p_world) -> np.ndarray:
    """World point to the pose's local (camera) frame: ``R^T (p - t)``."""
    R = pose.rotation.as_matrix()
    return R.T @ (np.asarray(p_world, dtype=float) - pose.position)


def transform_point_inverse(pose: Pose, p_local) -> np.ndarray:
    """Local (camera) frame point to the world: ``R p + t``."""
    R = pose.rotation.as_matrix()
    return R @ np.asarray(p_local, dtype=float) + pose.position


def project(intr: CameraIntrinsics, pose: Pose, q) -> tuple[float, float, float]:
    """Pinhole projection of world point ``q``; returns ``(u, v, depth)``.

    Depth is returned as is, so a point behind the camera comes back with a
    negative depth. Raises :class:`DegenerateProjectionError` when the point
    sits on the camera plane.
    """
    x, y, z = transform_point(pose, q)
    if abs(z) <= DEPTH_EPS:
        raise DegenerateProjectionError(f"depth {z} too close to zero")
    return intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy, float(z)


def unproject(intr: CameraIntrinsics, pose: Pose, u, v, depth) -> np.ndarray:
    x = (u - intr.cx) / intr.fx * depth
    y = (v - intr.cy) / intr.fy * depth
    return transform_point_inverse(pose, np.array([x, y, depth]))


def in_fov(intr: CameraIntrinsics, u, v, depth) -> int:
    return int(depth > 0 and 0 <= u < intr.width and 0 <= v < intr.height)


def rot6d_to_matrix(six) -> np.ndarray:
    """Gram-Schmidt on the two stored columns; third column by cross product."""
    six = np.asarray(six, dtype=float).reshape(6)
    a, b = six[:3], six[3:]
    na = np.linalg.norm(a)
    if not np.isfinite(na) or na <= 1e-9:
        raise InvalidRotationError("first column has (near) zero norm")
    c1 = a / na
    b_perp = b - (c1 @ b) * c1
    nb = np.linalg.norm(b_perp)
    if not np.isfinite(nb) or nb <= 1e-9 * max(1.0, np.linalg.norm(b)):
        raise InvalidRotationError("columns are (near) parallel")
    c2 = b_perp / nb
    return np.stack([c1, c2, np.cross(c1, c2)], axis=1)


def rot6d_to_rotation(six) -> Rotation:
    return Rotation.from_matrix(rot6d_to_matrix(six))


def matrix_to_rot6d(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[:, 0], R[:, 1]])


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose at ``eye`` with the optical axis toward ``target``."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=float)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return Pose(eye, Rotation.from_matrix(np.stack([right, down, fwd], axis=1)))


# -- batched helpers ---------------------------------------------------------

def rot6d_to_matrix_batch(six):
    """Vectorized Gram-Schmidt over ``(..., 6)``; also returns a validity mask."""
    six = np.asarray(six, dtype=float)
    a, b = six[..., :3], six[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    ok = np.isfinite(na[..., 0]) & (na[..., 0] > 1e-9)
    c1 = a / np.where(ok[..., None], na, 1.0)
    b_perp = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    nb = np.linalg.norm(b_perp, axis=-1, keepdims=True)
    bn = np.linalg.norm(b, axis=-1)
    ok &= np.isfinite(nb[..., 0]) & (nb[..., 0] > 1e-9 * np.maximum(1.0, bn))
    c2 = b_perp / np.where(ok[..., None], nb, 1.0)
    R = np.stack([c1, c2, np.cross(c1, c2)], axis=-1)
    return R, ok


def world_to_camera(R, t, q):
    """``R^T (q - t)`` broadcasting over leading axes of ``R (...,3,3)``, ``t (...,3)``."""
    return np.einsum("...ji,...j->...i", R, q - t)


def project_points(intr: CameraIntrinsics, R, t, q):
    """Returns ``u, v, depth`` arrays; degenerate depths give ``nan`` pixels."""
    pc = world_to_camera(R, t, q)
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(np.abs(z) > DEPTH_EPS, z, np.nan)
        u = intr.fx * pc[..., 0] / zs + intr.cx
        v = intr.fy * pc[..., 1] / zs + intr.cy
    return u, v, z


def in_fov_mask(intr: CameraIntrinsics, u, v, depth):
    # nan pixels compare False, so degenerate projections fall out here
    return (depth > 0) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)


def perturb_rotations(R, rotvecs):
    """Right-compose axis-angle noise onto stacked rotation matrices (broadcasting)."""
    rotvecs = np.asarray(rotvecs, dtype=float)
    dR = _ScipyRotation.from_rotvec(np.ascontiguousarray(rotvecs.reshape(-1, 3))).as_matrix()
    return R @ dR.reshape(rotvecs.shape[:-1] + (3, 3))
