"""Reference numpy implementations of the hot kernels.

Every function here has a twin of the same signature in ``_ckernels.pyx``;
``omnisfm.kernels`` picks one at import time. Keep the two in sync.
"""

import numpy as np
import scipy.sparse as sp

NAME = "python"


def epipolar_residuals(E, u1, u2, eps=1e-12):
    """Symmetric angular distance of each pair to its epipolar great circles.

    Uses the constraint ``u2^T E u1 = 0``. Returns ``(residuals, degenerate)``
    where ``degenerate`` marks pairs whose plane normal vanished (residual 0).
    """
    E = np.asarray(E, dtype=np.float64)
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    n2 = u1 @ E.T
    n1 = u2 @ E
    l2 = np.linalg.norm(n2, axis=1)
    l1 = np.linalg.norm(n1, axis=1)
    tol = eps * np.linalg.norm(E)
    degenerate = (l1 <= tol) | (l2 <= tol)
    l1 = np.where(degenerate, 1.0, l1)
    l2 = np.where(degenerate, 1.0, l2)
    a2 = np.minimum(np.abs(np.sum(n2 * u2, axis=1)) / l2, 1.0)
    a1 = np.minimum(np.abs(np.sum(n1 * u1, axis=1)) / l1, 1.0)
    res = 0.5 * (np.arcsin(a2) + np.arcsin(a1))
    res[degenerate] = 0.0
    return res, degenerate


def ba_linearize(R, t, X, cam_idx, pt_idx, obs, robust_c2, eps=1e-9):
    """Residuals, costs and Gauss-Newton blocks of the chord reprojection objective.

    Rotation increments are left-multiplied, ``R <- exp([w]x) R``; the pose
    parameter order is ``(w, t)``.

    Args:
        R: (Nc, 3, 3) rotations. t: (Nc, 3). X: (Np, 3).
        cam_idx, pt_idx: (n,) block indices of each observation.
        obs: (n, 3) observed unit bearings.
        robust_c2: squared soft-L1 scale; 0 disables the robustifier.

    Returns:
        cost (n,), Hcc (Nc, 6, 6), Hll (Np, 3, 3), Hcl (n, 6, 3), gc (Nc, 6),
        gl (Np, 3), valid (n,) bool. Invalid observations contribute nothing.
    """
    nc, npt = R.shape[0], X.shape[0]
    Ro = R[cam_idx]
    RX = np.einsum("nij,nj->ni", Ro, X[pt_idx])
    y = RX + t[cam_idx]
    d = np.linalg.norm(y, axis=1)
    valid = d > eps
    d = np.where(valid, d, 1.0)
    p = y / d[:, None]
    r = p - obs
    s = np.sum(r * r, axis=1)
    if robust_c2 > 0:
        z = s / robust_c2
        cost = robust_c2 * 2.0 * (np.sqrt(1.0 + z) - 1.0)
        w = 1.0 / np.sqrt(1.0 + z)
    else:
        cost = s
        w = np.ones_like(s)
    cost = np.where(valid, cost, 0.0)
    w = np.where(valid, w, 0.0)

    # dPi/dy = (I - p p^T) / |y|
    P = (np.eye(3)[None] - p[:, :, None] * p[:, None, :]) / d[:, None, None]
    Jc = np.empty((len(s), 3, 6))
    # dy/dw = -[RX]x
    Jc[:, :, :3] = -np.einsum("nij,njk->nik", P, _skew_batch(RX))
    Jc[:, :, 3:] = P
    Jl = np.einsum("nij,njk->nik", P, Ro)

    Jcw = Jc * w[:, None, None]
    Jlw = Jl * w[:, None, None]
    Hcc_o = np.einsum("nki,nkj->nij", Jcw, Jc)
    Hll_o = np.einsum("nki,nkj->nij", Jlw, Jl)
    Hcl = np.einsum("nki,nkj->nij", Jcw, Jl)
    gc_o = np.einsum("nki,nk->ni", Jcw, r)
    gl_o = np.einsum("nki,nk->ni", Jlw, r)

    Hcc = _scatter(Hcc_o.reshape(-1, 36), cam_idx, nc).reshape(nc, 6, 6)
    Hll = _scatter(Hll_o.reshape(-1, 9), pt_idx, npt).reshape(npt, 3, 3)
    gc = _scatter(gc_o, cam_idx, nc)
    gl = _scatter(gl_o, pt_idx, npt)
    return cost, Hcc, Hll, Hcl, gc, gl, valid


def schur_reduce(Hcl, Dinv, gl, cam_idx, pt_idx, cam_var, pt_free, n_var, order, offsets):
    """Accumulate the point-elimination terms of the reduced camera system.

    Computes ``B D^-1 B^T`` and ``B D^-1 gl`` restricted to free cameras and
    free points, where ``B`` stacks ``Hcl`` blocks.

    Args:
        cam_var: (Nc,) position of each camera among the free ones, -1 if fixed.
        n_var: number of free cameras.
        order, offsets: observations grouped by point (unused here; the
            compiled twin walks them).

    Returns:
        (6*n_var, 6*n_var) matrix and (6*n_var,) vector.
    """
    cv = cam_var[cam_idx]
    keep = (cv >= 0) & pt_free[pt_idx]
    if not np.any(keep):
        return np.zeros((6 * n_var, 6 * n_var)), np.zeros(6 * n_var)
    B = Hcl[keep]
    Wb = np.einsum("nij,njk->nik", B, Dinv[pt_idx[keep]])
    rows = (6 * cv[keep])[:, None, None] + np.arange(6)[None, :, None]
    cols = (3 * pt_idx[keep])[:, None, None] + np.arange(3)[None, None, :]
    rows = np.broadcast_to(rows, B.shape).ravel()
    cols = np.broadcast_to(cols, B.shape).ravel()
    shape = (6 * n_var, 3 * len(pt_free))
    Bs = sp.csr_matrix((B.ravel(), (rows, cols)), shape=shape)
    Ws = sp.csr_matrix((Wb.ravel(), (rows, cols)), shape=shape)
    reduction = (Ws @ Bs.T).toarray()
    rhs = Ws @ gl.ravel()
    return reduction, rhs


def sample_bilinear_wrap(image, cols, rows):
    """Bilinear lookup in an ERP raster at continuous pixel coordinates.

    Columns wrap around the seam; rows clamp at the poles.

    Args:
        image: (H, W, C) float array.
        cols, rows: (N,) continuous coordinates (pixel centers at i + 0.5).

    Returns:
        (N, C) samples.
    """
    H, W = image.shape[:2]
    x = np.asarray(cols, dtype=np.float64) - 0.5
    y = np.clip(np.asarray(rows, dtype=np.float64) - 0.5, 0.0, H - 1.0)
    x0 = np.floor(x)
    y0 = np.minimum(np.floor(y), H - 2 if H > 1 else 0)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    x0 = x0.astype(np.int64) % W
    x1 = (x0 + 1) % W
    y0 = y0.astype(np.int64)
    y1 = np.minimum(y0 + 1, H - 1)
    top = image[y0, x0] * (1.0 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1.0 - fx) + image[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _skew_batch(v):
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1] = -v[..., 2]
    K[..., 0, 2] = v[..., 1]
    K[..., 1, 0] = v[..., 2]
    K[..., 1, 2] = -v[..., 0]
    K[..., 2, 0] = -v[..., 1]
    K[..., 2, 1] = v[..., 0]
    return K


def _scatter(values, idx, n):
    out = np.zeros((n, values.shape[1]))
    for k in range(values.shape[1]):
        out[:, k] = np.bincount(idx, weights=values[:, k], minlength=n)
    return out
