"""Two-view geometry from bearing correspondences.

Relative poses follow ``x2 = R x1 + t`` and the epipolar constraint is
``u2^T E u1 = 0`` with ``E = [t]x R``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CheiralityError, DomainError, InsufficientDataError, VerificationError
from .geometry import orthonormalize, skew

AMBIGUITY_RATIO = 0.99


@dataclass(frozen=True, eq=False)
class EssentialMatrix:
    e: np.ndarray
    ambiguous: bool = False


@dataclass(eq=False)
class TwoViewGeometry:
    essential: EssentialMatrix
    rotation: np.ndarray
    translation: np.ndarray
    inlier_mask: np.ndarray
    residuals: np.ndarray
    median_triangulation_angle: float = 0.0  # degrees, over inliers
    n_iterations: int = 0

    @property
    def n_inliers(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))


def essential_from_pose(R, t) -> np.ndarray:
    """``[t]x R``, Frobenius-normalized."""
    E = skew(np.asarray(t, dtype=np.float64)) @ np.asarray(R, dtype=np.float64)
    return E / np.linalg.norm(E)


def _whitening(u):
    M = u.T @ u / len(u)
    w, V = np.linalg.eigh(M)
    if w[0] <= 1e-12 * w[-1]:
        raise DomainError("bearing set is degenerate (all on one great circle)")
    T = (V / np.sqrt(w)) @ V.T
    v = u @ T
    return v / np.linalg.norm(v, axis=1, keepdims=True), T


def estimate_essential_8pt(u1, u2) -> EssentialMatrix:
    """Linear essential-matrix estimate from n >= 8 bearing pairs.

    Each side is whitened by the inverse square root of its second-moment
    matrix before the DLT; the solution is mapped back and projected onto the
    essential manifold (singular values ``(s, s, 0)``).

    Raises:
        InsufficientDataError: fewer than 8 pairs.
        DomainError: one side's bearings span only a plane.
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    n = len(u1)
    if n < 8 or len(u2) != n:
        raise InsufficientDataError(f"8-point estimation needs >= 8 pairs, got {n}")
    v1, T1 = _whitening(u1)
    v2, T2 = _whitening(u2)
    # row i of A is kron(v2_i, v1_i), matching row-major vec(E)
    A = (v2[:, :, None] * v1[:, None, :]).reshape(n, 9)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    s = np.concatenate([s, np.zeros(9 - len(s))])
    # a second null direction (s[7] ~ 0) is the extreme case of near-equal values
    ambiguous = bool(s[7] <= 1e-12 * s[0] or s[8] / s[7] > AMBIGUITY_RATIO)
    E = T2 @ Vt[-1].reshape(3, 3) @ T1
    U, d, Vt = np.linalg.svd(E)
    sigma = 0.5 * (d[0] + d[1])
    E = U @ np.diag([sigma, sigma, 0.0]) @ Vt
    return EssentialMatrix(E / np.linalg.norm(E), ambiguous)


def epipolar_residual(E, u1, u2):
    """Angular epipolar error in radians.

    Mean of the angle from ``u2`` to the great circle ``E u1`` and the angle
    from ``u1`` to ``E^T u2``. Accepts single vectors or (N, 3) arrays. Pairs
    on an epipole get 0.
    """
    E = np.ascontiguousarray(getattr(E, "e", E), dtype=np.float64)
    a = np.ascontiguousarray(np.atleast_2d(u1), dtype=np.float64)
    b = np.ascontiguousarray(np.atleast_2d(u2), dtype=np.float64)
    res, _ = kernels.epipolar_residuals(E, a, b)
    return float(res[0]) if np.ndim(u1) == 1 else res


def triangulate_pair(R, t, u1, u2):
    """Midpoint triangulation of bearing pairs in camera-1 coordinates.

    Returns:
        points (N, 3), depth1 (N,), depth2 (N,), ok (N,) where ``ok`` is False
        for (near-)parallel rays.
    """
    u1 = np.atleast_2d(u1)
    u2 = np.atleast_2d(u2)
    C2 = -np.asarray(R).T @ np.asarray(t)
    d2 = u2 @ np.asarray(R)  # R^T u2 as rows
    b = np.sum(u1 * d2, axis=1)
    p = u1 @ C2
    q = d2 @ C2
    den = 1.0 - b * b
    ok = den > 1e-12
    den = np.where(ok, den, 1.0)
    lam1 = (p - b * q) / den
    lam2 = (b * p - q) / den
    X = 0.5 * (lam1[:, None] * u1 + C2 + lam2[:, None] * d2)
    return X, lam1, lam2, ok


def pose_candidates(E):
    E = np.asarray(getattr(E, "e", E), dtype=np.float64)
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    Ra = U @ W @ Vt
    Rb = U @ W.T @ Vt
    t = U[:, 2]
    return [(Ra, t), (Ra, -t), (Rb, t), (Rb, -t)]


def cheirality_votes(E, u1, u2) -> list[int]:
    """Positive-depth counts for the four decompositions of ``E``."""
    votes = []
    for R, t in pose_candidates(E):
        _, l1, l2, ok = triangulate_pair(R, t, u1, u2)
        votes.append(int(np.count_nonzero(ok & (l1 > 0) & (l2 > 0))))
    return votes


def decompose_essential(E, u1, u2):
    """Pick the ``(R, t)`` decomposition that puts most points in front.

    Raises:
        InsufficientDataError: no pairs given.
        CheiralityError: no candidate wins a strict majority of the pairs.
    """
    u1 = np.atleast_2d(np.asarray(u1, dtype=np.float64))
    u2 = np.atleast_2d(np.asarray(u2, dtype=np.float64))
    if len(u1) == 0:
        raise InsufficientDataError("decomposition needs at least one pair")
    cands = pose_candidates(E)
    votes = cheirality_votes(E, u1, u2)
    best = int(np.argmax(votes))
    if 2 * votes[best] <= len(u1):
        raise CheiralityError(f"no decomposition has a positive-depth majority (votes {votes} of {len(u1)})")
    R, t = cands[best]
    return orthonormalize(R), t / np.linalg.norm(t)


def median_triangulation_angle(R, t, u1, u2) -> float:
    """Median angle (degrees) between the two viewing rays of front-facing points."""
    X, l1, l2, ok = triangulate_pair(R, t, u1, u2)
    front = ok & (l1 > 0) & (l2 > 0)
    if not np.any(front):
        return 0.0
    X = X[front]
    C2 = -np.asarray(R).T @ np.asarray(t)
    a = X / np.linalg.norm(X, axis=1, keepdims=True)
    b = X - C2
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    ang = np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), np.sum(a * b, axis=1))
    return float(np.degrees(np.median(ang)))


def _required_iterations(n_inliers, n, confidence, sample_size=8):
    w = n_inliers / n
    p_good = w**sample_size
    if p_good >= 1.0:
        return 1
    if p_good <= 0.0:
        return math.inf
    return math.ceil(math.log(1.0 - confidence) / math.log1p(-p_good))


def _score(E, u1, u2, threshold):
    res, _ = kernels.epipolar_residuals(E, u1, u2)
    inl = res < threshold
    return res, inl, int(np.count_nonzero(inl)), float(res[inl].sum())


def ransac_two_view(
    u1,
    u2,
    threshold: float = 0.01,
    max_iters: int = 10_000,
    confidence: float = 0.9999,
    min_inliers: int = 15,
    seed: int | np.random.SeedSequence = 0,
) -> TwoViewGeometry:
    """Robust relative pose from bearing pairs.

    Each new best hypothesis is refit on its inliers (local optimization);
    hypotheses are ranked by inlier count, then smaller inlier residual sum,
    then earlier index. The winner is refit on its inliers until the inlier
    set stops changing, then decomposed.

    Raises:
        InsufficientDataError: fewer than 8 pairs.
        VerificationError: fewer than ``min_inliers`` inliers.
        CheiralityError: the final model cannot be decomposed.
    """
    u1 = np.ascontiguousarray(u1, dtype=np.float64)
    u2 = np.ascontiguousarray(u2, dtype=np.float64)
    n = len(u1)
    if n < 8:
        raise InsufficientDataError(f"two-view RANSAC needs >= 8 pairs, got {n}")
    rng = np.random.default_rng(seed)

    best_key = None
    best_E = None
    needed = max_iters
    k = 0
    while k < min(max_iters, needed):
        sample = rng.choice(n, 8, replace=False)
        k += 1
        try:
            E = estimate_essential_8pt(u1[sample], u2[sample]).e
        except DomainError:
            continue
        _, inl, cnt, ssum = _score(E, u1, u2, threshold)
        key = (cnt, -ssum, -k)
        if best_key is not None and key <= best_key:
            continue
        if cnt >= 8:
            try:
                E_lo = estimate_essential_8pt(u1[inl], u2[inl]).e
                _, _, cnt_lo, ssum_lo = _score(E_lo, u1, u2, threshold)
                if (cnt_lo, -ssum_lo) > (cnt, -ssum):
                    E, cnt, ssum = E_lo, cnt_lo, ssum_lo
                    key = (cnt, -ssum, -k)
            except DomainError:
                pass
        best_key, best_E = key, E
        needed = _required_iterations(cnt, n, confidence)

    if best_E is None or best_key[0] < min_inliers:
        got = 0 if best_key is None else best_key[0]
        raise VerificationError(f"only {got} inliers (need {min_inliers})")

    res, inl, cnt, _ = _score(best_E, u1, u2, threshold)
    model = EssentialMatrix(best_E)
    for _ in range(10):
        try:
            cand = estimate_essential_8pt(u1[inl], u2[inl])
        except (DomainError, InsufficientDataError):
            break
        res_c, inl_c, cnt_c, _ = _score(cand.e, u1, u2, threshold)
        if cnt_c < cnt:
            break
        same = np.array_equal(inl_c, inl)
        model, res, inl, cnt = cand, res_c, inl_c, cnt_c
        if same:
            break
    if cnt < min_inliers:
        raise VerificationError(f"only {cnt} inliers (need {min_inliers})")

    R, t = decompose_essential(model, u1[inl], u2[inl])
    angle = median_triangulation_angle(R, t, u1[inl], u2[inl])
    return TwoViewGeometry(model, R, t, inl, res, angle, k)
