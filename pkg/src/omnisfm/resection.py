"""Absolute pose from bearing-to-point correspondences.

The minimal solver is Grunert's P3P. It only uses the angles between the
three rays, so it works unchanged for rays pointing anywhere on the sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import InsufficientDataError, RegistrationError
from .geometry import Pose, angular_residual, orthonormalize, so3_exp


def absolute_orientation(P, Q):
    """Rigid ``(R, t)`` minimizing ``sum |R P_i + t - Q_i|^2`` (Kabsch)."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    mp, mq = P.mean(axis=0), Q.mean(axis=0)
    H = (P - mp).T @ (Q - mq)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return R, mq - R @ mp


def p3p(bearings, points) -> list[tuple[np.ndarray, np.ndarray]]:
    """All real solutions ``(R, t)`` of the three-point problem.

    Args:
        bearings: (3, 3) unit rays in the camera frame.
        points: (3, 3) world points.

    Returns:
        Up to four world-to-camera poses; empty for degenerate input.
    """
    f = np.asarray(bearings, dtype=np.float64)
    X = np.asarray(points, dtype=np.float64)
    a2 = float(np.sum((X[1] - X[2]) ** 2))
    b2 = float(np.sum((X[0] - X[2]) ** 2))
    c2 = float(np.sum((X[0] - X[1]) ** 2))
    if min(a2, b2, c2) < 1e-18 or np.linalg.norm(np.cross(X[1] - X[0], X[2] - X[0])) < 1e-12:
        return []
    ca = float(f[1] @ f[2])
    cb = float(f[0] @ f[2])
    cg = float(f[0] @ f[1])

    amc = (a2 - c2) / b2
    apc = (a2 + c2) / b2
    A4 = (amc - 1.0) ** 2 - 4.0 * c2 / b2 * ca * ca
    A3 = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb)
    A2 = 2.0 * (
        amc * amc
        - 1.0
        + 2.0 * amc * amc * cb * cb
        + 2.0 * (b2 - c2) / b2 * ca * ca
        - 4.0 * apc * ca * cb * cg
        + 2.0 * (b2 - a2) / b2 * cg * cg
    )
    A1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg)
    A0 = (1.0 + amc) ** 2 - 4.0 * a2 / b2 * cg * cg

    coeffs = np.array([A4, A3, A2, A1, A0])
    if not np.all(np.isfinite(coeffs)) or np.abs(coeffs).max() == 0:
        return []
    roots = np.roots(np.trim_zeros(coeffs, "f"))
    scale = np.abs(roots) + 1.0
    out = []
    for v in roots[np.abs(roots.imag) <= 1e-6 * scale].real:
        if v <= 0:
            continue
        v = _polish(coeffs, v)
        den = 2.0 * (cg - v * ca)
        if abs(den) < 1e-12:
            continue
        u = ((amc - 1.0) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den
        if u <= 0:
            continue
        q = 1.0 + v * v - 2.0 * v * cb
        if q <= 0:
            continue
        s1 = math.sqrt(b2 / q)
        Q = np.array([s1, u * s1, v * s1])[:, None] * f
        R, t = absolute_orientation(X, Q)
        out.append((R, t))
    return out


def _polish(coeffs, v, iters=2):
    dc = np.polyder(coeffs)
    for _ in range(iters):
        d = np.polyval(dc, v)
        if d == 0:
            break
        v = v - np.polyval(coeffs, v) / d
    return v


@dataclass(eq=False)
class ResectionResult:
    pose: Pose
    inlier_mask: np.ndarray
    residuals: np.ndarray  # radians, all correspondences
    n_iterations: int

    @property
    def n_inliers(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))


def _angular_errors(R, t, bearings, points):
    y = points @ R.T + t
    n = np.linalg.norm(y, axis=1, keepdims=True)
    n[n == 0] = 1.0
    return angular_residual(bearings, y / n)


def refine_pose(R, t, bearings, points, max_nfev=50):
    """Levenberg-Marquardt on the summed squared angular error."""

    def fun(x):
        Rx = so3_exp(x[:3]) @ R
        return _angular_errors(Rx, x[3:], bearings, points)

    x0 = np.concatenate([np.zeros(3), t])
    if len(bearings) < 6:
        return R, t
    sol = least_squares(fun, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev * 7)
    return orthonormalize(so3_exp(sol.x[:3]) @ R), sol.x[3:]


def register_image(
    bearings,
    points,
    threshold: float = 0.01,
    min_inliers: int = 12,
    max_iters: int = 10_000,
    confidence: float = 0.9999,
    seed: int | np.random.SeedSequence = 0,
) -> ResectionResult:
    """Estimate a camera pose from 2D-3D correspondences.

    P3P hypotheses inside RANSAC, scored by angular error; the best pose is
    polished on its inliers with Levenberg-Marquardt and the inlier set is
    recomputed.

    Raises:
        InsufficientDataError: fewer than 4 correspondences.
        RegistrationError: fewer than ``min_inliers`` inliers.
    """
    f = np.ascontiguousarray(bearings, dtype=np.float64)
    X = np.ascontiguousarray(points, dtype=np.float64)
    n = len(f)
    if n < 4:
        raise InsufficientDataError(f"resection needs >= 4 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best = None  # (count, -sum, -k), R, t
    needed = max_iters
    k = 0
    while k < min(max_iters, needed):
        sample = rng.choice(n, 3, replace=False)
        k += 1
        for R, t in p3p(f[sample], X[sample]):
            err = _angular_errors(R, t, f, X)
            inl = err < threshold
            key = (int(inl.sum()), -float(err[inl].sum()), -k)
            if best is None or key > best[0]:
                best = (key, R, t)
                w = key[0] / n
                p = w**3
                needed = 1 if p >= 1 else (math.inf if p <= 0 else math.ceil(math.log(1 - confidence) / math.log1p(-p)))
    if best is None or best[0][0] < min_inliers:
        got = 0 if best is None else best[0][0]
        raise RegistrationError(f"only {got} resection inliers (need {min_inliers})")

    _, R, t = best
    err = _angular_errors(R, t, f, X)
    inl = err < threshold
    for _ in range(3):
        R, t = refine_pose(R, t, f[inl], X[inl])
        err = _angular_errors(R, t, f, X)
        new = err < threshold
        if np.array_equal(new, inl):
            break
        inl = new
    if inl.sum() < min_inliers:
        raise RegistrationError(f"only {int(inl.sum())} resection inliers after refinement (need {min_inliers})")
    return ResectionResult(Pose(orthonormalize(R), t), inl, err, k)
