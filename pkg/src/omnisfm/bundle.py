"""Levenberg-Marquardt bundle adjustment on the sphere.

Each observation contributes the 3-vector chord residual
``r = (R X + t) / |R X + t| - u`` and the cost ``|r|^2``, or
``c^2 * soft_l1(|r|^2 / c^2)`` when robustified. Point blocks are eliminated
with the Schur complement and the reduced camera system is solved densely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels
from .errors import DomainError
from .geometry import CENTER_EPS, Pose, orthonormalize, so3_exp

ROBUST_SCALE = 0.02


def soft_l1(s):
    """``2 (sqrt(1 + s) - 1)``."""
    s = np.asarray(s, dtype=np.float64)
    out = 2.0 * (np.sqrt(1.0 + s) - 1.0)
    return float(out) if out.ndim == 0 else out


def residual(pose: Pose, point, u_obs) -> np.ndarray:
    """Chord residual of one observation.

    Raises:
        ProjectionError: the point sits on the camera center.
    """
    from .geometry import project_point

    return project_point(np.asarray(point, dtype=np.float64), pose) - np.asarray(u_obs, dtype=np.float64)


@dataclass
class BAOptions:
    max_iters: int = 100
    f_tol: float = 1e-10
    g_tol: float = 1e-10
    lambda_init: float = 1e-4
    lambda_min: float = 1e-12
    lambda_max: float = 1e6
    max_rejections: int = 10


@dataclass(eq=False)
class BAProblem:
    """Pose blocks, point blocks and the observations tying them together.

    Attributes:
        rotations, translations: (Nc, 3, 3) and (Nc, 3) initial pose values.
        points: (Np, 3) initial point positions.
        cam_idx, pt_idx: (n,) block index of each observation.
        bearings: (n, 3) observed unit bearings.
        cam_fixed, pt_fixed: per-block flags.
        robustify: apply soft-L1 with scale ``robust_scale``.
    """

    rotations: np.ndarray
    translations: np.ndarray
    points: np.ndarray
    cam_idx: np.ndarray
    pt_idx: np.ndarray
    bearings: np.ndarray
    cam_fixed: np.ndarray
    pt_fixed: np.ndarray
    robustify: bool = False
    robust_scale: float = ROBUST_SCALE

    def __post_init__(self):
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(-1, 3, 3)
        self.translations = np.ascontiguousarray(self.translations, dtype=np.float64).reshape(-1, 3)
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.cam_idx = np.ascontiguousarray(self.cam_idx, dtype=np.int64)
        self.pt_idx = np.ascontiguousarray(self.pt_idx, dtype=np.int64)
        self.bearings = np.ascontiguousarray(self.bearings, dtype=np.float64).reshape(-1, 3)
        self.cam_fixed = np.asarray(self.cam_fixed, dtype=bool)
        self.pt_fixed = np.asarray(self.pt_fixed, dtype=bool)
        nc, npt = len(self.rotations), len(self.points)
        if len(self.translations) != nc or len(self.cam_fixed) != nc or len(self.pt_fixed) != npt:
            raise DomainError("block arrays have inconsistent lengths")
        if not (len(self.cam_idx) == len(self.pt_idx) == len(self.bearings)):
            raise DomainError("observation arrays have inconsistent lengths")
        if len(self.cam_idx) and (
            self.cam_idx.min() < 0 or self.cam_idx.max() >= nc or self.pt_idx.min() < 0 or self.pt_idx.max() >= npt
        ):
            raise DomainError("observation references a missing block")
        if nc and not self.cam_fixed.any():
            raise DomainError("at least one pose block must be fixed")
        if self.robustify and not self.robust_scale > 0:
            raise DomainError("robust_scale must be positive")

    @property
    def robust_c2(self) -> float:
        return self.robust_scale**2 if self.robustify else 0.0

    def block_costs(self, rotations=None, translations=None, points=None) -> np.ndarray:
        R = self.rotations if rotations is None else rotations
        t = self.translations if translations is None else translations
        X = self.points if points is None else points
        return kernels.ba_linearize(R, t, X, self.cam_idx, self.pt_idx, self.bearings, self.robust_c2, CENTER_EPS)[0]

    def cost(self, rotations=None, translations=None, points=None) -> float:
        return float(np.sum(self.block_costs(rotations, translations, points)))


@dataclass
class BAReport:
    initial_cost: float
    final_cost: float
    iterations: int = 0
    accepted: int = 0
    costs: list[float] = field(default_factory=list)
    stalled: bool = False
    termination: str = ""
    n_inactive: int = 0


def _group_by_point(pt_idx, npt):
    order = np.argsort(pt_idx, kind="stable").astype(np.int64)
    counts = np.bincount(pt_idx, minlength=npt)
    offsets = np.zeros(npt + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return order, offsets


def optimize(problem: BAProblem, opts: BAOptions | None = None) -> BAReport:
    """Minimize the problem's cost in place.

    Returns a report with the accepted-step cost history. The problem's pose
    and point arrays hold the optimized values afterwards; fixed blocks are
    never written.

    Raises:
        DomainError: a parameter or the starting cost is not finite.
    """
    opts = opts or BAOptions()
    pb = problem
    nc, npt = len(pb.rotations), len(pb.points)
    free_cams = np.flatnonzero(~pb.cam_fixed)
    cam_var = np.full(nc, -1, dtype=np.int64)
    cam_var[free_cams] = np.arange(len(free_cams))
    n_var = len(free_cams)
    pt_free = ~pb.pt_fixed
    order, offsets = _group_by_point(pb.pt_idx, npt)
    c2 = pb.robust_c2

    R, t, X = pb.rotations.copy(), pb.translations.copy(), pb.points.copy()
    if not (np.isfinite(R).all() and np.isfinite(t).all() and np.isfinite(X).all()):
        raise DomainError("bundle adjustment parameters must be finite")
    lin = kernels.ba_linearize(R, t, X, pb.cam_idx, pb.pt_idx, pb.bearings, c2, CENTER_EPS)
    cost = float(lin[0].sum())
    if not np.isfinite(cost):
        raise DomainError("initial bundle adjustment cost is not finite")
    report = BAReport(cost, cost, costs=[cost], n_inactive=int(np.count_nonzero(~lin[6])))
    lam = opts.lambda_init
    rejections = 0

    for it in range(opts.max_iters):
        _, Hcc, Hll, Hcl, gc, gl, _ = lin
        gnorm = max(
            np.abs(gc[free_cams]).max(initial=0.0),
            np.abs(gl[pt_free]).max(initial=0.0),
        )
        if gnorm < opts.g_tol:
            report.termination = "gradient"
            break

        step_taken = False
        while True:
            report.iterations += 1
            D = Hll + lam * _diag_damping(Hll)
            D[~pt_free] = np.eye(3)
            Dinv = np.linalg.inv(D)
            gl_eff = np.where(pt_free[:, None], gl, 0.0)
            red, rhs_red = kernels.schur_reduce(
                Hcl, Dinv, gl_eff, pb.cam_idx, pb.pt_idx, cam_var, pt_free, n_var, order, offsets
            )
            A = Hcc[free_cams] + lam * _diag_damping(Hcc[free_cams])
            S = scipy.linalg.block_diag(*A) - red if n_var else np.zeros((0, 0))
            rhs = -gc[free_cams].ravel() + rhs_red
            dc = _solve_spd(S, rhs) if n_var else np.zeros(0)
            dcam = np.zeros((nc, 6))
            dcam[free_cams] = dc.reshape(-1, 6)
            # dl = D^-1 (-gl - sum_o Hcl_o^T dc_o)
            back = np.einsum("nij,ni->nj", Hcl, dcam[pb.cam_idx])
            acc = np.stack([np.bincount(pb.pt_idx, weights=back[:, k], minlength=npt) for k in range(3)], axis=1)
            dl = np.einsum("nij,nj->ni", Dinv, -gl - acc)
            dl[~pt_free] = 0.0

            R_new, t_new, X_new = R.copy(), t.copy(), X + dl
            for c in free_cams:
                R_new[c] = orthonormalize(so3_exp(dcam[c, :3]) @ R[c])
                t_new[c] = t[c] + dcam[c, 3:]
            lin_new = kernels.ba_linearize(R_new, t_new, X_new, pb.cam_idx, pb.pt_idx, pb.bearings, c2, CENTER_EPS)
            new_cost = float(lin_new[0].sum())
            if np.isfinite(new_cost) and new_cost < cost and np.all(lin_new[6] | ~lin[6]):
                rel = (cost - new_cost) / max(cost, 1e-300)
                R, t, X, lin, cost = R_new, t_new, X_new, lin_new, new_cost
                report.accepted += 1
                report.costs.append(cost)
                lam = max(lam / 10.0, opts.lambda_min)
                rejections = 0
                step_taken = True
                break
            lam = min(lam * 10.0, opts.lambda_max)
            rejections += 1
            if rejections >= opts.max_rejections:
                break
        if not step_taken:
            report.stalled = cost > 0.0
            report.termination = "stalled" if report.stalled else "converged"
            break
        if rel < opts.f_tol:
            report.termination = "cost"
            break
    else:
        report.termination = "max_iters"

    pb.rotations[free_cams] = R[free_cams]
    pb.translations[free_cams] = t[free_cams]
    pb.points[pt_free] = X[pt_free]
    report.final_cost = cost
    report.n_inactive = int(np.count_nonzero(~lin[6]))
    return report


def _diag_damping(H):
    d = np.diagonal(H, axis1=-2, axis2=-1)
    scale = np.maximum(d, 1e-12 * max(d.max(initial=0.0), 1.0))
    out = np.zeros_like(H)
    idx = np.arange(H.shape[-1])
    out[..., idx, idx] = scale
    return out


def _solve_spd(S, b):
    try:
        c = scipy.linalg.cho_factor(S, check_finite=False)
        x = scipy.linalg.cho_solve(c, b, check_finite=False)
        if np.all(np.isfinite(x)):
            return x
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(S, b, rcond=None)[0]
