"""The compiled and numpy kernels must agree to rounding."""

import numpy as np
import pytest

from omnisfm import _pykernels, kernels
from omnisfm.bundle import _group_by_point

pytestmark = pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")


def _c():
    from omnisfm import _ckernels

    return _ckernels


def _unit(a):
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def test_backend_switch():
    prev = kernels.backend()
    try:
        kernels.use_backend("python")
        assert kernels.backend() == "python" and kernels.ba_linearize is _pykernels.ba_linearize
        kernels.use_backend("cython")
        assert kernels.backend() == "cython"
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")
    finally:
        kernels.use_backend(prev)


def test_epipolar_residuals_agree():
    rng = np.random.default_rng(0)
    E = rng.normal(size=(3, 3))
    u1, u2 = _unit(rng.normal(size=(500, 3))), _unit(rng.normal(size=(500, 3)))
    u1[0] = np.linalg.svd(E)[2][-1]  # exact epipole
    a = _pykernels.epipolar_residuals(E, u1, u2)
    b = _c().epipolar_residuals(E, u1, u2)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(a[1], b[1])


def _ba_inputs(rng, nc=6, npt=40, n=200):
    from scipy.spatial.transform import Rotation

    R = Rotation.random(nc, random_state=rng.integers(2**31)).as_matrix()
    t = rng.normal(size=(nc, 3))
    X = rng.normal(size=(npt, 3)) * 3
    cam_idx = rng.integers(0, nc, n).astype(np.int64)
    pt_idx = rng.integers(0, npt, n).astype(np.int64)
    obs = _unit(rng.normal(size=(n, 3)))
    return R, t, X, cam_idx, pt_idx, obs


@pytest.mark.parametrize("c2", [0.0, 0.02**2])
def test_ba_linearize_agrees(c2):
    rng = np.random.default_rng(1)
    args = _ba_inputs(rng)
    a = _pykernels.ba_linearize(*args, c2, 1e-9)
    b = _c().ba_linearize(*args, c2, 1e-9)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


def test_schur_reduce_agrees():
    rng = np.random.default_rng(2)
    R, t, X, cam_idx, pt_idx, obs = _ba_inputs(rng)
    _, Hcc, Hll, Hcl, gc, gl, _ = _pykernels.ba_linearize(R, t, X, cam_idx, pt_idx, obs, 0.0, 1e-9)
    Dinv = np.linalg.inv(Hll + np.eye(3))
    cam_var = np.array([-1, 0, 1, -1, 2, 3], dtype=np.int64)
    pt_free = np.ones(len(X), dtype=bool)
    pt_free[:5] = False
    order, offsets = _group_by_point(pt_idx, len(X))
    args = (Hcl, Dinv, gl, cam_idx, pt_idx, cam_var, pt_free, 4, order, offsets)
    a = _pykernels.schur_reduce(*args)
    b = _c().schur_reduce(*args)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


def test_sample_bilinear_wrap_agrees():
    rng = np.random.default_rng(3)
    img = rng.random((20, 40, 3))
    cols = rng.uniform(-3, 43, 1000)
    rows = rng.uniform(-1, 20, 1000)
    a = _pykernels.sample_bilinear_wrap(img, cols, rows)
    b = _c().sample_bilinear_wrap(img, cols, rows)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    # a pixel center returns the stored value
    np.testing.assert_array_equal(_c().sample_bilinear_wrap(img, np.array([5.5]), np.array([7.5]))[0], img[7, 5])
    # half way across the seam averages the first and last column
    np.testing.assert_allclose(_c().sample_bilinear_wrap(img, np.array([0.0]), np.array([7.5]))[0], (img[7, 0] + img[7, -1]) / 2)


def test_read_only_inputs_accepted():
    rng = np.random.default_rng(4)
    args = list(_ba_inputs(rng))
    for a in args:
        a.flags.writeable = False
    _c().ba_linearize(*args, 0.0, 1e-9)
