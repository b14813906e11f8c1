import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.spatial.transform import Rotation

from omnisfm import kernels
from omnisfm.bundle import BAProblem, residual
from omnisfm.geometry import Pose, project_point, so3_exp
from omnisfm.twoview import epipolar_residual, essential_from_pose

settings.register_profile("omnisfm", deadline=None, max_examples=100, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("omnisfm")


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_pose(rng, scale=1.0) -> Pose:
    return Pose(random_rotation(rng), rng.normal(size=3) * scale)


def two_view_problem(rng, n=50, baseline=1.0):
    """Camera 1 at identity, camera 2 at a random pose; points in a shell.

    Returns ``(R_rel, t_rel, u1, u2, X)`` with noiseless unit bearings.
    """
    R2 = random_rotation(rng)
    c2 = rng.normal(size=3)
    c2 *= baseline / np.linalg.norm(c2)
    t2 = -R2 @ c2
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    X = d * rng.uniform(3.0, 8.0, size=(n, 1))
    y1 = X
    y2 = X @ R2.T + t2
    u1 = y1 / np.linalg.norm(y1, axis=1, keepdims=True)
    u2 = y2 / np.linalg.norm(y2, axis=1, keepdims=True)
    return R2, t2, u1, u2, X


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.backend()
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


def umeyama_align(est: dict, gt: dict) -> dict:
    """Map ``est`` into the ``gt`` frame with the least-squares similarity on camera centers."""
    from omnisfm.geometry import Pose

    names = sorted(est)
    A = np.array([est[n].center for n in names])
    B = np.array([gt[n].center for n in names])
    ma, mb = A.mean(0), B.mean(0)
    A0, B0 = A - ma, B - mb
    U, S, Vt = np.linalg.svd(B0.T @ A0 / len(names))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R0 = U @ D @ Vt
    s = np.trace(np.diag(S) @ D) / (A0**2).sum(1).mean()
    t0 = mb - s * R0 @ ma
    out = {}
    for n in names:
        R = est[n].rotation @ R0.T
        C = s * R0 @ est[n].center + t0
        out[n] = Pose(R, -R @ C)
    return out


def run_pipeline(scene, dims, noise=0.0, outliers=0.0, config=None, pairs=None):
    """Synthetic matches through verification, tracks and reconstruction, in process."""
    from omnisfm.config import Config
    from omnisfm.matching import build_tracks, quantize_matches
    from omnisfm.sfm import reconstruct, verify_pairs
    from omnisfm.synth import observe

    cfg = config or Config()
    obs = observe(scene, dims, noise, outliers)
    q = [quantize_matches(p, cfg.grid) for p in (pairs(obs.pairs) if pairs else obs.pairs)]
    d = {n: dims for n in scene.names}
    geo, inl, _ = verify_pairs(q, d, cfg)
    ts = build_tracks(inl)
    return reconstruct(d, geo, ts.tracks, cfg), geo


def _signed_epipolar_terms(E, u1, u2):
    n2 = u1 @ E.T
    n1 = u2 @ E
    d2 = np.einsum("ni,ni->n", n2, u2) / np.linalg.norm(n2, axis=1)
    d1 = np.einsum("ni,ni->n", n1, u1) / np.linalg.norm(n1, axis=1)
    return np.arcsin(np.clip(d2, -1, 1)), np.arcsin(np.clip(d1, -1, 1))


def min_max_residual(R, t, u1, u2):
    """Smallest achievable worst-case epipolar residual over essential matrices near ``(R, t)``.

    Minimax fit with SLSQP: each residual is half the sum of two arcsines,
    and bounding all four sign combinations keeps the constraints smooth.
    """
    from scipy.optimize import minimize

    t = t / np.linalg.norm(t)

    def model(x):
        tt = t + x[3:6]
        return essential_from_pose(so3_exp(x[:3]) @ R, tt / np.linalg.norm(tt))

    def cons(x):
        a, b = _signed_epipolar_terms(model(x), u1, u2)
        s = x[6]
        return np.concatenate([s - 0.5 * (a + b), s - 0.5 * (a - b), s + 0.5 * (a - b), s + 0.5 * (a + b)])

    x0 = np.zeros(7)
    x0[6] = epipolar_residual(model(x0), u1, u2).max()
    res = minimize(lambda x: x[6], x0, method="SLSQP", constraints=[{"type": "ineq", "fun": cons}],
                   options={"maxiter": 200, "ftol": 1e-12})
    return float(epipolar_residual(model(res.x), u1, u2).max())


def contaminated(rng, n_in=70, n_out=30, threshold=0.01):
    """Inliers plus random outliers, re-drawing any outlier that is accidentally consistent.

    An outlier counts as consistent when some essential matrix keeps it and
    every inlier within ``threshold``: a count-first RANSAC would rightly
    take it as an inlier.
    """
    R, t, u1, u2, _ = two_view_problem(rng, n_in + n_out)
    E = essential_from_pose(R, t)
    labels = np.zeros(n_in + n_out, dtype=bool)
    labels[:n_in] = True
    for k in range(n_in, n_in + n_out):
        while True:
            u2[k] = rng.normal(size=3)
            u2[k] /= np.linalg.norm(u2[k])
            r = epipolar_residual(E, u1[k], u2[k])
            if r <= 2 * threshold:
                continue
            idx = np.r_[np.arange(n_in), k]
            if min_max_residual(R, t, u1[idx], u2[idx]) > threshold:
                break
    perm = rng.permutation(n_in + n_out)
    return R, t, u1[perm], u2[perm], labels[perm]


def scene_problem(scene, poses=None, points=None, fixed=(0,), robustify=False):
    names = scene.names
    poses = poses or scene.poses
    nc, npt = len(names), len(scene.points)
    cam_idx = np.repeat(np.arange(nc), npt)
    pt_idx = np.tile(np.arange(npt), nc)
    obs = np.concatenate([project_point(scene.points, scene.poses[n]) for n in names])
    cam_fixed = np.zeros(nc, dtype=bool)
    cam_fixed[list(fixed)] = True
    return BAProblem(
        np.array([poses[n].rotation for n in names]),
        np.array([poses[n].translation for n in names]),
        (scene.points if points is None else points).copy(),
        cam_idx,
        pt_idx,
        obs,
        cam_fixed,
        np.zeros(npt, dtype=bool),
        robustify=robustify,
    )


def reanchor(pb, gt_scene):
    """Scale the solution about camera 0 so camera 1's distance matches ground truth."""
    R, t = pb.rotations, pb.translations
    C = -np.einsum("nji,nj->ni", R, t)
    gt_C = np.array([gt_scene.poses[n].center for n in gt_scene.names])
    k = np.linalg.norm(gt_C[1] - gt_C[0]) / np.linalg.norm(C[1] - C[0])
    C2 = C[0] + k * (C - C[0])
    t2 = -np.einsum("nij,nj->ni", R, C2)
    X2 = C[0] + k * (pb.points - C[0])
    return R, t2, X2


def fd_jacobians(R, t, X, u, h=1e-6):
    def f(dw, dt, dx):
        return residual(Pose(so3_exp(dw) @ R, t + dt), X + dx, u)

    Jc = np.zeros((3, 6))
    Jl = np.zeros((3, 3))
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        Jc[:, k] = (f(e[:3], e[3:], 0) - f(-e[:3], -e[3:], 0)) / (2 * h)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        Jl[:, k] = (f(np.zeros(3), 0, e) - f(np.zeros(3), 0, -e)) / (2 * h)
    return Jc, Jl
