import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from omnisfm.errors import DomainError, ProjectionError
from omnisfm.geometry import (
    ErpDims,
    Pose,
    angular_residual,
    bearing_to_pixel,
    pixel_to_bearing,
    project_point,
    rotation_angle,
    so3_exp,
    so3_log,
)

from conftest import random_pose, random_rotation

D = ErpDims(640, 320)


@pytest.mark.parametrize(
    "px, expected",
    [((320.0, 160.0), (0, 0, 1)), ((480.0, 160.0), (1, 0, 0)), ((100.0, 0.0), (0, 1, 0))],
)
def test_pixel_to_bearing_examples(px, expected):
    np.testing.assert_allclose(pixel_to_bearing(px, D), expected, atol=1e-15)


@pytest.mark.parametrize(
    "u, expected",
    [((0, 0, 1), (320.0, 160.0)), ((0, 0, -1), (0.0, 160.0)), ((0, 1, 0), (0.0, 0.0)), ((0, -1, 0), (0.0, 320.0))],
)
def test_bearing_to_pixel_examples(u, expected):
    np.testing.assert_allclose(bearing_to_pixel(np.array(u, float), D), expected, atol=1e-12)


def test_seam_is_half_open():
    # theta slightly below +pi lands just under W, never at W
    u = np.array([np.sin(np.pi - 1e-12), 0.0, np.cos(np.pi - 1e-12)])
    c = bearing_to_pixel(u, D)[0]
    assert 0.0 <= c < D.width


@pytest.mark.parametrize("px", [(-0.1, 10.0), (640.5, 10.0), (10.0, -1e-9), (10.0, 321.0), (np.nan, 1.0)])
def test_pixel_out_of_range(px):
    with pytest.raises(DomainError):
        pixel_to_bearing(px, D)


def test_bearing_to_pixel_rejects_non_unit():
    with pytest.raises(DomainError):
        bearing_to_pixel(np.array([0.0, 0.0, 1.01]), D)
    bearing_to_pixel(np.array([0.0, 0.0, 1.0 + 5e-7]), D)  # inside tolerance


@pytest.mark.parametrize("w, h", [(640, 300), (641, 320), (2, 1), (0, 0)])
def test_bad_dims(w, h):
    with pytest.raises(DomainError):
        ErpDims(w, h)


def test_project_point_examples():
    np.testing.assert_allclose(project_point(np.array([0, 0, 5.0]), Pose.identity()), [0, 0, 1])
    np.testing.assert_allclose(project_point(np.array([2, 0, 0.0]), Pose(np.eye(3), [-1, 0, 0])), [1, 0, 0])
    pose = random_pose(np.random.default_rng(1))
    with pytest.raises(ProjectionError):
        project_point(pose.center, pose)


def test_angular_residual_examples():
    z, x = np.array([0, 0, 1.0]), np.array([1.0, 0, 0])
    assert angular_residual(z, z) == 0.0
    assert angular_residual(z, x) == pytest.approx(math.pi / 2, abs=1e-15)
    assert angular_residual(z, -z) == pytest.approx(math.pi, abs=1e-15)


# --- properties -------------------------------------------------------------

pixels = st.tuples(
    st.floats(0.0, 640.0, allow_nan=False, exclude_max=True),
    st.floats(160.0 * (1e-3 / (math.pi / 2)) + 1e-6, 320.0 - 160.0 * (1e-3 / (math.pi / 2)) - 1e-6),
)


@given(pixels)
def test_round_trip_away_from_poles(px):
    u = pixel_to_bearing(px, D)
    back = bearing_to_pixel(u, D)
    dc = abs(back[0] - px[0])
    assert min(dc, D.width - dc) < 1e-6
    assert abs(back[1] - px[1]) < 1e-6


@given(arrays(np.float64, (64, 2), elements=st.floats(0.0, 1.0)))
def test_bearings_are_unit(a):
    u = pixel_to_bearing(a * [D.width, D.height], D)
    assert np.abs(np.linalg.norm(u, axis=1) - 1.0).max() < 1e-9


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_projection_scale_invariance(seed, k):
    rng = np.random.default_rng(seed)
    Xc = rng.normal(size=3) + 0.1
    u1 = project_point(Xc, Pose.identity())
    u2 = project_point(k * Xc, Pose.identity())
    assert np.abs(u1 - u2).max() < 1e-15


@given(st.integers(0, 2**32 - 1))
def test_angular_residual_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, 3))
    a, b, c = (v / np.linalg.norm(v) for v in (a, b, c))
    assert angular_residual(a, b) == angular_residual(b, a)
    assert angular_residual(a, c) <= angular_residual(a, b) + angular_residual(b, c) + 1e-12
    # same function as the clamped arccos away from the ends of [0, pi]
    assert angular_residual(a, b) == pytest.approx(math.acos(max(-1.0, min(1.0, float(a @ b)))), abs=1e-7)


def test_angular_residual_small_angles():
    z = np.array([0.0, 0.0, 1.0])
    for eps in (1e-9, 1e-6, 1e-3):
        tilted = np.array([math.sin(eps), 0.0, math.cos(eps)])
        assert angular_residual(z, tilted) == pytest.approx(eps, rel=1e-9)


# --- pose algebra -------------------------------------------------------------


def test_pose_rejects_non_rotation():
    with pytest.raises(DomainError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(DomainError):
        Pose(np.eye(3) * 1.001, np.zeros(3))


@given(st.integers(0, 2**32 - 1))
def test_quaternion_round_trip(seed):
    p = random_pose(np.random.default_rng(seed))
    q = p.quaternion()
    assert q[0] >= 0 and abs(np.linalg.norm(q) - 1) < 1e-12
    p2 = Pose.from_quaternion(q, p.translation)
    assert np.abs(p2.rotation - p.rotation).max() < 1e-12


def test_compose_inverse_relative():
    rng = np.random.default_rng(3)
    a, b = random_pose(rng), random_pose(rng)
    ident = a.compose(a.inverse())
    assert np.abs(ident.rotation - np.eye(3)).max() < 1e-12 and np.abs(ident.translation).max() < 1e-12
    rel = b.relative_to(a)
    X = rng.normal(size=3)
    np.testing.assert_allclose(rel.transform(a.transform(X)), b.transform(X), atol=1e-12)
    np.testing.assert_allclose(a.transform(a.center), 0, atol=1e-12)


def test_so3_exp_log():
    rng = np.random.default_rng(4)
    for _ in range(20):
        w = rng.normal(size=3)
        w *= rng.uniform(0, 3.0) / np.linalg.norm(w)
        R = so3_exp(w)
        np.testing.assert_allclose(so3_log(R), w, atol=1e-12)
        assert rotation_angle(R) == pytest.approx(np.linalg.norm(w), abs=1e-12)
    assert rotation_angle(so3_exp(np.array([1e-10, 0, 0]))) == pytest.approx(1e-10, rel=1e-6)
    R = random_rotation(rng)
    assert abs(np.linalg.det(R) - 1) < 1e-12
