"""Multiview midpoint triangulation with acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TriangulationError
from .geometry import angular_residual

MIN_ANGLE_DEG = 1.5
MAX_ERROR = 0.02


@dataclass(frozen=True)
class TriangulationGates:
    min_angle_deg: float = MIN_ANGLE_DEG
    max_error: float = MAX_ERROR


def midpoint(bearings, rotations, translations) -> np.ndarray:
    """Point minimizing ``sum |(I - u u^T)(R X + t)|^2`` over all views.

    Raises:
        TriangulationError: the normal matrix is singular (parallel rays).
    """
    u = np.asarray(bearings, dtype=np.float64)
    R = np.asarray(rotations, dtype=np.float64)
    t = np.asarray(translations, dtype=np.float64)
    P = np.eye(3)[None] - u[:, :, None] * u[:, None, :]
    A = np.einsum("nji,njk,nkl->il", R, P, R)
    b = -np.einsum("nji,njk,nk->i", R, P, t)
    w = np.linalg.eigvalsh(A)
    if w[0] <= 1e-10 * max(w[-1], 1e-300):
        raise TriangulationError("low-parallax", "rays are parallel")
    return np.linalg.solve(A, b)


def check_point(X, bearings, rotations, translations, gates: TriangulationGates = TriangulationGates()):
    """Apply the acceptance tests to a triangulated point.

    Returns:
        Per-view angular reprojection errors (radians).

    Raises:
        TriangulationError: with reason ``"low-parallax"``, ``"cheirality"`` or
        ``"reprojection"``.
    """
    u = np.asarray(bearings, dtype=np.float64)
    R = np.asarray(rotations, dtype=np.float64)
    t = np.asarray(translations, dtype=np.float64)
    y = np.einsum("nij,j->ni", R, X) + t
    if np.any(np.sum(y * u, axis=1) <= 0):
        raise TriangulationError("cheirality", "point behind a camera")
    centers = -np.einsum("nji,nj->ni", R, t)
    rays = X - centers
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    cosmin = np.min(rays @ rays.T)
    if np.degrees(np.arccos(np.clip(cosmin, -1.0, 1.0))) < gates.min_angle_deg:
        raise TriangulationError("low-parallax", "triangulation angle below threshold")
    err = angular_residual(u, y / np.linalg.norm(y, axis=1, keepdims=True))
    err = np.atleast_1d(err)
    if err.max() > gates.max_error:
        raise TriangulationError("reprojection", f"reprojection error {err.max():.4g} rad")
    return err


def triangulate(bearings, rotations, translations, gates: TriangulationGates = TriangulationGates()):
    """Triangulate and validate one track.

    Returns:
        ``(X, errors)`` with the per-view angular errors.
    """
    if len(bearings) < 2:
        raise TriangulationError("too-few-views", "need at least two registered views")
    X = midpoint(bearings, rotations, translations)
    return X, check_point(X, bearings, rotations, translations, gates)
