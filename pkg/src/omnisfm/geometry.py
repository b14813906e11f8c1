"""Spherical camera model.

Conventions:
  - ERP pixels are continuous, ``c`` in [0, W] left to right and ``r`` in
    [0, H] top to bottom; integer pixel ``i`` has its center at ``i + 0.5``.
  - Longitude ``theta = 2*pi*c/W - pi``, latitude ``phi = pi/2 - pi*r/H``.
  - Bearing ``u = (sin(theta) cos(phi), sin(phi), cos(theta) cos(phi))``, so
    +z is forward, +x is right and +y is up.
  - Poses map world to camera: ``x_cam = R @ x_world + t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DomainError, ProjectionError

CENTER_EPS = 1e-9
UNIT_TOL = 1e-6


@dataclass(frozen=True)
class ErpDims:
    """Size of a full 360x180 degree equirectangular image."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 4 or self.width % 2 or self.width != 2 * self.height:
            raise DomainError(
                f"ERP dims must satisfy width = 2*height with even width >= 4, got {self.width}x{self.height}"
            )

    @property
    def rad_per_pixel(self) -> float:
        return 2.0 * np.pi / self.width


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise DomainError("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise DomainError("rotation is not in SO(3)")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, q, t) -> "Pose":
        """Build a pose from a (qw, qx, qy, qz) quaternion and a translation."""
        q = np.asarray(q, dtype=np.float64)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < 1e-12:
            raise DomainError("quaternion has zero norm")
        R = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        return cls(orthonormalize(R), t)

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (qw, qx, qy, qz) with qw >= 0."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return -q if q[0] < 0 else q

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Map world points (3,) or (N, 3) into the camera frame."""
        return np.asarray(X) @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, self.center)

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self o other`` (apply ``other`` first)."""
        return Pose(
            orthonormalize(self.rotation @ other.rotation),
            self.rotation @ other.translation + self.translation,
        )

    def relative_to(self, other: "Pose") -> "Pose":
        """Transform taking ``other``'s camera frame into this camera's frame."""
        R = orthonormalize(self.rotation @ other.rotation.T)
        return Pose(R, self.translation - R @ other.translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"Pose(q={np.round(self.quaternion(), 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix for the axis-angle vector ``w`` (Rodrigues)."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-8:
        return orthonormalize(np.eye(3) + K + 0.5 * K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def so3_log(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle of ``R`` in radians, accurate for small angles."""
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


def _as_points(px):
    px = np.asarray(px, dtype=np.float64)
    if px.shape[-1] != 2:
        raise DomainError(f"expected (..., 2) pixel coordinates, got shape {px.shape}")
    return px


def pixel_to_bearing(px, dims: ErpDims) -> np.ndarray:
    """Convert continuous ERP pixel coordinates to unit bearing vectors.

    Args:
        px: ``(c, r)`` or an ``(N, 2)`` array of them.
        dims: image size.

    Returns:
        ``(3,)`` or ``(N, 3)`` unit vectors.

    Raises:
        DomainError: a coordinate lies outside ``[0, W] x [0, H]``.
    """
    px = _as_points(px)
    c, r = px[..., 0], px[..., 1]
    if (
        not np.all(np.isfinite(px))
        or np.any(c < 0)
        or np.any(c > dims.width)
        or np.any(r < 0)
        or np.any(r > dims.height)
    ):
        raise DomainError(f"pixel coordinates outside {dims.width}x{dims.height} image")
    theta = 2.0 * np.pi * c / dims.width - np.pi
    phi = 0.5 * np.pi - np.pi * r / dims.height
    cp = np.cos(phi)
    u = np.stack([np.sin(theta) * cp, np.sin(phi), np.cos(theta) * cp], axis=-1)
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


def bearing_to_pixel(u, dims: ErpDims) -> np.ndarray:
    """Inverse of :func:`pixel_to_bearing`.

    The column is returned in ``[0, W)``; at the poles it is 0 by convention.
    """
    u = np.asarray(u, dtype=np.float64)
    n = np.linalg.norm(u, axis=-1)
    if not np.all(np.abs(n - 1.0) <= UNIT_TOL):
        raise DomainError("bearing vectors must have unit norm")
    x, y, z = u[..., 0], u[..., 1], u[..., 2]
    pole = (x == 0.0) & (z == 0.0)
    theta = np.where(pole, -np.pi, np.arctan2(x, z))
    phi = np.arcsin(np.clip(y, -1.0, 1.0))
    c = (theta + np.pi) / (2.0 * np.pi) * dims.width
    c = np.where(c >= dims.width, c - dims.width, c)
    r = (0.5 * np.pi - phi) / np.pi * dims.height
    return np.stack([c, r], axis=-1)


def project_point(X, pose: Pose, eps: float = CENTER_EPS) -> np.ndarray:
    """Spherical projection of world point(s) into ``pose``'s camera.

    Raises:
        ProjectionError: a point is within ``eps`` of the camera center.
    """
    y = pose.transform(X)
    n = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(n <= eps):
        raise ProjectionError("point coincides with the camera center")
    return y / n


def angular_residual(u_obs, u_proj) -> np.ndarray | float:
    """Angle in radians between unit vectors (broadcasts over leading axes).

    Evaluated as ``atan2(|a x b|, a.b)``, which equals ``acos(a.b)`` for unit
    inputs but keeps full precision near 0 and pi.
    """
    a = np.asarray(u_obs, dtype=np.float64)
    b = np.asarray(u_proj, dtype=np.float64)
    s = np.linalg.norm(np.cross(a, b), axis=-1)
    c = np.sum(a * b, axis=-1)
    out = np.arctan2(s, c)
    return float(out) if out.ndim == 0 else out


def angle_between(a, b) -> np.ndarray | float:
    """Angle between arbitrary nonzero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return angular_residual(
        a / np.linalg.norm(a, axis=-1, keepdims=True), b / np.linalg.norm(b, axis=-1, keepdims=True)
    )
