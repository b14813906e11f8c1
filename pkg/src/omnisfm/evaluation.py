"""Pose accuracy metrics: pairwise relative errors and AUC at thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DomainError
from .geometry import Pose, angle_between, rotation_angle

DEFAULT_TAUS = (3.0, 5.0, 10.0)
MIN_BASELINE = 1e-9


@dataclass(frozen=True)
class PoseErrorSample:
    image_a: str
    image_b: str
    rot_err: float  # degrees
    trans_dir_err: float  # degrees
    registered: bool

    @property
    def combined(self) -> float:
        if not self.registered:
            return math.inf
        return max(self.rot_err, self.trans_dir_err)


def _relative(pa: Pose, pb: Pose):
    R = pb.rotation @ pa.rotation.T
    return R, pb.translation - R @ pa.translation


def relative_pose_errors(est: dict[str, Pose], gt: dict[str, Pose]) -> list[PoseErrorSample]:
    """One sample per unordered pair of ground-truth images.

    Pairs with an image missing from ``est`` count as unregistered and get an
    infinite combined error.

    Raises:
        DomainError: ``est`` has an image unknown to ``gt``.
    """
    unknown = sorted(set(est) - set(gt))
    if unknown:
        raise DomainError(f"estimated images missing from ground truth: {unknown[:5]}")
    samples = []
    for a, b in combinations(sorted(gt), 2):
        if a not in est or b not in est:
            samples.append(PoseErrorSample(a, b, math.inf, math.inf, False))
            continue
        Re, te = _relative(est[a], est[b])
        Rg, tg = _relative(gt[a], gt[b])
        rot = math.degrees(rotation_angle(Re @ Rg.T))
        if np.linalg.norm(tg) < MIN_BASELINE:
            trans = 0.0
        elif np.linalg.norm(te) < MIN_BASELINE:
            trans = 180.0
        else:
            trans = math.degrees(angle_between(te, tg))
        samples.append(PoseErrorSample(a, b, rot, trans, True))
    return samples


def auc(errors, tau: float) -> float:
    """Area under the recall curve up to ``tau``, in percent.

    ``recall(x)`` is the fraction of errors ``<= x``; each error ``e <= tau``
    contributes ``tau - e`` to the integral, so the result is exact.

    Raises:
        DomainError: empty input or ``tau <= 0``.
    """
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise DomainError("auc needs at least one sample")
    if not tau > 0:
        raise DomainError("tau must be positive")
    if np.any(np.isnan(e)) or np.any(e < 0):
        raise DomainError("errors must be non-negative")
    area = math.fsum(tau - x for x in e.tolist() if x <= tau)
    return 100.0 * area / (e.size * tau)


@dataclass
class EvaluationReport:
    n_registered: int
    n_images: int
    auc: dict[float, float]
    mean_rot_err: float
    median_rot_err: float
    mean_trans_err: float
    median_trans_err: float
    n_pairs: int

    def lines(self) -> list[str]:
        out = [f"registered = {self.n_registered} / {self.n_images}", f"pairs = {self.n_pairs}"]
        out += [f"auc@{_tau(t)} = {v:.2f}" for t, v in self.auc.items()]
        out += [
            f"mean_rot_err_deg = {self.mean_rot_err:.6g}",
            f"median_rot_err_deg = {self.median_rot_err:.6g}",
            f"mean_trans_err_deg = {self.mean_trans_err:.6g}",
            f"median_trans_err_deg = {self.median_trans_err:.6g}",
        ]
        return out

    def table(self) -> str:
        head = ["# Registered"] + [f"AUC @{_tau(t)}deg" for t in self.auc]
        row = [f"{self.n_registered}/{self.n_images}"] + [f"{v:.2f}" for v in self.auc.values()]
        widths = [max(len(h), len(r)) for h, r in zip(head, row)]
        fmt = " | ".join(f"{{:>{w}}}" for w in widths)
        return "\n".join([fmt.format(*head), "-+-".join("-" * w for w in widths), fmt.format(*row)])

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n\n" + self.table() + "\n"


def _tau(t):
    return f"{t:g}"


def report(est: dict[str, Pose], gt: dict[str, Pose], taus=DEFAULT_TAUS) -> EvaluationReport:
    """Registration count, AUCs and error statistics.

    Raises:
        DomainError: fewer than two images on either side, or unknown images.
    """
    if len(gt) < 2:
        raise DomainError("evaluation needs at least two images")
    if len(est) < 2:
        raise DomainError(f"estimate has {len(est)} pose(s); no relative pose to score")
    samples = relative_pose_errors(est, gt)
    combined = [s.combined for s in samples]
    rot = np.array([s.rot_err for s in samples if s.registered])
    trans = np.array([s.trans_dir_err for s in samples if s.registered])

    def stat(f, a):
        return float(f(a)) if a.size else math.nan

    return EvaluationReport(
        n_registered=len(est),
        n_images=len(gt),
        auc={float(t): auc(combined, t) for t in taus},
        mean_rot_err=stat(np.mean, rot),
        median_rot_err=stat(np.median, rot),
        mean_trans_err=stat(np.mean, trans),
        median_trans_err=stat(np.median, trans),
        n_pairs=len(samples),
    )
