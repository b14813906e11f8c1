# cython: language_level=3
"""Compiled twins of the kernels in ``_pykernels``.

Same signatures and return conventions; see the numpy module for the
documentation of each function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, asin, fabs, floor

cnp.import_array()

NAME = "cython"


def epipolar_residuals(const double[:, ::1] E, const double[:, ::1] u1, const double[:, ::1] u2, double eps=1e-12):
    cdef Py_ssize_t n = u1.shape[0], i, a
    cdef double[::1] res = np.empty(n)
    cdef cnp.uint8_t[::1] deg = np.zeros(n, dtype=np.uint8)
    cdef double enorm = 0.0
    cdef double n1[3]
    cdef double n2[3]
    cdef double l1, l2, d1, d2, tol
    for a in range(3):
        enorm += E[a, 0] * E[a, 0] + E[a, 1] * E[a, 1] + E[a, 2] * E[a, 2]
    tol = eps * sqrt(enorm)
    for i in range(n):
        for a in range(3):
            n2[a] = E[a, 0] * u1[i, 0] + E[a, 1] * u1[i, 1] + E[a, 2] * u1[i, 2]
            n1[a] = E[0, a] * u2[i, 0] + E[1, a] * u2[i, 1] + E[2, a] * u2[i, 2]
        l1 = sqrt(n1[0] * n1[0] + n1[1] * n1[1] + n1[2] * n1[2])
        l2 = sqrt(n2[0] * n2[0] + n2[1] * n2[1] + n2[2] * n2[2])
        if l1 <= tol or l2 <= tol:
            deg[i] = 1
            res[i] = 0.0
            continue
        d2 = fabs(n2[0] * u2[i, 0] + n2[1] * u2[i, 1] + n2[2] * u2[i, 2]) / l2
        d1 = fabs(n1[0] * u1[i, 0] + n1[1] * u1[i, 1] + n1[2] * u1[i, 2]) / l1
        if d2 > 1.0:
            d2 = 1.0
        if d1 > 1.0:
            d1 = 1.0
        res[i] = 0.5 * (asin(d2) + asin(d1))
    return np.asarray(res), np.asarray(deg).astype(bool)


def ba_linearize(const double[:, :, ::1] R, const double[:, ::1] t, const double[:, ::1] X,
                 const cnp.int64_t[::1] cam_idx, const cnp.int64_t[::1] pt_idx,
                 const double[:, ::1] obs, double robust_c2, double eps=1e-9):
    cdef Py_ssize_t n = obs.shape[0], nc = R.shape[0], npt = X.shape[0]
    cdef Py_ssize_t o, c, q, a, b, k
    cdef double[::1] cost = np.zeros(n)
    cdef double[:, :, ::1] Hcc = np.zeros((nc, 6, 6))
    cdef double[:, :, ::1] Hll = np.zeros((npt, 3, 3))
    cdef double[:, :, ::1] Hcl = np.zeros((n, 6, 3))
    cdef double[:, ::1] gc = np.zeros((nc, 6))
    cdef double[:, ::1] gl = np.zeros((npt, 3))
    cdef cnp.uint8_t[::1] valid = np.zeros(n, dtype=np.uint8)
    cdef double rx[3]
    cdef double y[3]
    cdef double p[3]
    cdef double r[3]
    cdef double P[3][3]
    cdef double Jc[3][6]
    cdef double Jl[3][3]
    cdef double d, s, z, w, acc
    for o in range(n):
        c = cam_idx[o]
        q = pt_idx[o]
        for a in range(3):
            rx[a] = R[c, a, 0] * X[q, 0] + R[c, a, 1] * X[q, 1] + R[c, a, 2] * X[q, 2]
            y[a] = rx[a] + t[c, a]
        d = sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
        if not d > eps:
            continue
        valid[o] = 1
        s = 0.0
        for a in range(3):
            p[a] = y[a] / d
            r[a] = p[a] - obs[o, a]
            s += r[a] * r[a]
        if robust_c2 > 0:
            z = s / robust_c2
            cost[o] = robust_c2 * 2.0 * (sqrt(1.0 + z) - 1.0)
            w = 1.0 / sqrt(1.0 + z)
        else:
            cost[o] = s
            w = 1.0
        for a in range(3):
            for b in range(3):
                P[a][b] = ((1.0 if a == b else 0.0) - p[a] * p[b]) / d
        # -P [rx]x ; [rx]x = [[0,-z,y],[z,0,-x],[-y,x,0]]
        for a in range(3):
            Jc[a][0] = -(P[a][1] * rx[2] - P[a][2] * rx[1])
            Jc[a][1] = -(-P[a][0] * rx[2] + P[a][2] * rx[0])
            Jc[a][2] = -(P[a][0] * rx[1] - P[a][1] * rx[0])
            Jc[a][3] = P[a][0]
            Jc[a][4] = P[a][1]
            Jc[a][5] = P[a][2]
            for b in range(3):
                Jl[a][b] = P[a][0] * R[c, 0, b] + P[a][1] * R[c, 1, b] + P[a][2] * R[c, 2, b]
        for a in range(6):
            for b in range(6):
                acc = 0.0
                for k in range(3):
                    acc += Jc[k][a] * Jc[k][b]
                Hcc[c, a, b] += w * acc
            for b in range(3):
                acc = 0.0
                for k in range(3):
                    acc += Jc[k][a] * Jl[k][b]
                Hcl[o, a, b] = w * acc
            acc = 0.0
            for k in range(3):
                acc += Jc[k][a] * r[k]
            gc[c, a] += w * acc
        for a in range(3):
            for b in range(3):
                acc = 0.0
                for k in range(3):
                    acc += Jl[k][a] * Jl[k][b]
                Hll[q, a, b] += w * acc
            acc = 0.0
            for k in range(3):
                acc += Jl[k][a] * r[k]
            gl[q, a] += w * acc
    return (np.asarray(cost), np.asarray(Hcc), np.asarray(Hll), np.asarray(Hcl),
            np.asarray(gc), np.asarray(gl), np.asarray(valid).astype(bool))


def schur_reduce(const double[:, :, ::1] Hcl, const double[:, :, ::1] Dinv, const double[:, ::1] gl,
                 const cnp.int64_t[::1] cam_idx, const cnp.int64_t[::1] pt_idx,
                 const cnp.int64_t[::1] cam_var, pt_free_arr, Py_ssize_t n_var,
                 const cnp.int64_t[::1] order, const cnp.int64_t[::1] offsets):
    cdef cnp.uint8_t[::1] pt_free = np.ascontiguousarray(pt_free_arr, dtype=np.uint8)
    cdef Py_ssize_t npt = Dinv.shape[0]
    cdef double[:, ::1] S = np.zeros((6 * n_var, 6 * n_var))
    cdef double[::1] rhs = np.zeros(6 * n_var)
    cdef double[:, :, ::1] W = np.zeros((Hcl.shape[0], 6, 3))
    cdef Py_ssize_t q, i, j, oi, oj, ci, cj, a, b, k
    cdef double acc
    for q in range(npt):
        if not pt_free[q]:
            continue
        # W_o = Hcl_o Dinv_q for every free-camera observation of q
        for i in range(offsets[q], offsets[q + 1]):
            oi = order[i]
            ci = cam_var[cam_idx[oi]]
            if ci < 0:
                continue
            for a in range(6):
                for b in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += Hcl[oi, a, k] * Dinv[q, k, b]
                    W[oi, a, b] = acc
                acc = 0.0
                for k in range(3):
                    acc += W[oi, a, k] * gl[q, k]
                rhs[6 * ci + a] += acc
        for i in range(offsets[q], offsets[q + 1]):
            oi = order[i]
            ci = cam_var[cam_idx[oi]]
            if ci < 0:
                continue
            for j in range(offsets[q], offsets[q + 1]):
                oj = order[j]
                cj = cam_var[cam_idx[oj]]
                if cj < 0:
                    continue
                for a in range(6):
                    for b in range(6):
                        acc = 0.0
                        for k in range(3):
                            acc += W[oi, a, k] * Hcl[oj, b, k]
                        S[6 * ci + a, 6 * cj + b] += acc
    return np.asarray(S), np.asarray(rhs)


def sample_bilinear_wrap(const double[:, :, ::1] image, cols_arr, rows_arr):
    cdef const double[::1] cols = np.ascontiguousarray(cols_arr, dtype=np.float64)
    cdef const double[::1] rows = np.ascontiguousarray(rows_arr, dtype=np.float64)
    cdef Py_ssize_t H = image.shape[0], W = image.shape[1], C = image.shape[2]
    cdef Py_ssize_t n = cols.shape[0], i, ch, x0, x1, y0, y1
    cdef double[:, ::1] out = np.empty((n, C))
    cdef double x, y, fx, fy, fx0, fy0
    for i in range(n):
        x = cols[i] - 0.5
        y = rows[i] - 0.5
        if y < 0.0:
            y = 0.0
        elif y > H - 1.0:
            y = H - 1.0
        fx0 = floor(x)
        fy0 = floor(y)
        if H > 1 and fy0 > H - 2:
            fy0 = H - 2
        fx = x - fx0
        fy = y - fy0
        x0 = (<Py_ssize_t> fx0) % W
        if x0 < 0:
            x0 += W
        x1 = (x0 + 1) % W
        y0 = <Py_ssize_t> fy0
        y1 = y0 + 1
        if y1 > H - 1:
            y1 = H - 1
        for ch in range(C):
            out[i, ch] = ((image[y0, x0, ch] * (1.0 - fx) + image[y0, x1, ch] * fx) * (1.0 - fy)
                          + (image[y1, x0, ch] * (1.0 - fx) + image[y1, x1, ch] * fx) * fy)
    return np.asarray(out)
