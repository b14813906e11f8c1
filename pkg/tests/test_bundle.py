import numpy as np
import pytest
from hypothesis import given, strategies as st

from omnisfm import kernels
from omnisfm.bundle import BAOptions, BAProblem, optimize, residual, soft_l1
from omnisfm.errors import DomainError, ProjectionError
from omnisfm.geometry import Pose, project_point, rotation_angle
from omnisfm.synth import generate_scene, perturb_poses

from conftest import fd_jacobians, random_pose, reanchor, scene_problem


# --- residual and loss -------------------------------------------------------------


def test_residual_examples():
    pose = Pose.identity()
    assert np.abs(residual(pose, [0, 0, 3.0], [0, 0, 1.0])).max() == 0.0
    np.testing.assert_allclose(residual(pose, [2.0, 0, 0], [0, 0, 1.0]), [1, 0, -1])
    with pytest.raises(ProjectionError):
        residual(pose, [0, 0, 0.0], [0, 0, 1.0])


@given(st.integers(0, 2**32 - 1))
def test_chord_identity(seed):
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    X = rng.normal(size=3) * 4
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    r = residual(pose, X, u)
    p = project_point(X, pose)
    assert abs(r @ r - 2 * (1 - p @ u)) < 1e-12


def test_soft_l1_examples():
    assert soft_l1(0.0) == 0.0
    assert soft_l1(3.0) == 2.0
    assert soft_l1(8.0) == 4.0
    s = np.linspace(0, 10, 101)
    rho = soft_l1(s)
    assert np.all(np.diff(rho) > 0) and np.all(np.diff(rho, 2) < 0)
    assert (soft_l1(1e-8) - soft_l1(0.0)) / 1e-8 == pytest.approx(1.0, rel=1e-6)


@given(st.integers(0, 2**32 - 1), st.booleans())
def test_block_costs(seed, robust):
    rng = np.random.default_rng(seed)
    scene = generate_scene(3, 10, seed=int(seed % 1000))
    pb = scene_problem(scene, points=scene.points + 0.2 * rng.normal(size=scene.points.shape), robustify=robust)
    costs = pb.block_costs()
    for k in range(len(costs)):
        r = residual(Pose(pb.rotations[pb.cam_idx[k]], pb.translations[pb.cam_idx[k]]), pb.points[pb.pt_idx[k]], pb.bearings[k])
        s = r @ r
        expected = pb.robust_scale**2 * soft_l1(s / pb.robust_scale**2) if robust else s
        assert costs[k] == pytest.approx(expected, rel=1e-12, abs=1e-300)


# --- Jacobians ---------------------------------------------------------------------


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


def test_jacobians_against_finite_differences(backend):
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        pose = random_pose(rng, 2.0)
        X = pose.center + rng.normal(size=3) * rng.uniform(0.5, 5.0)
        u = project_point(X + 0.3 * rng.normal(size=3), pose)  # off-ray: non-zero residual
        R, t = pose.rotation.copy(), pose.translation.copy()
        cost, Hcc, Hll, Hcl, gc, gl, valid = kernels.ba_linearize(
            R[None], t[None], X[None], np.zeros(1, np.int64), np.zeros(1, np.int64), u[None], 0.0, 1e-9
        )
        Jc, Jl = fd_jacobians(R, t, X, u)
        r = residual(pose, X, u)
        for got, want in [
            (Hcc[0], Jc.T @ Jc),
            (Hll[0], Jl.T @ Jl),
            (Hcl[0], Jc.T @ Jl),
            (gc[0], Jc.T @ r),
            (gl[0], Jl.T @ r),
        ]:
            worst = max(worst, rel_err(got, want))
    assert worst < 1e-4, worst


def test_robust_weighting(backend):
    rng = np.random.default_rng(5)
    pose = random_pose(rng)
    X = pose.center + np.array([0.0, 0.0, 3.0])
    u = project_point(X + np.array([0.2, 0.0, 0.0]), pose)
    args = (pose.rotation[None], pose.translation[None], X[None], np.zeros(1, np.int64), np.zeros(1, np.int64), u[None])
    plain = kernels.ba_linearize(*args, 0.0, 1e-9)
    c2 = 0.02**2
    robust = kernels.ba_linearize(*args, c2, 1e-9)
    r = residual(pose, X, u)
    w = 1 / np.sqrt(1 + (r @ r) / c2)
    np.testing.assert_allclose(robust[1], w * plain[1], rtol=1e-12)
    np.testing.assert_allclose(robust[4], w * plain[4], rtol=1e-12)
    assert robust[0][0] == pytest.approx(c2 * soft_l1((r @ r) / c2), rel=1e-12)


def test_point_at_camera_center_is_deactivated(backend):
    pose = Pose.identity()
    out = kernels.ba_linearize(
        pose.rotation[None], pose.translation[None], np.zeros((1, 3)), np.zeros(1, np.int64), np.zeros(1, np.int64), np.array([[0, 0, 1.0]]), 0.0, 1e-9
    )
    assert not out[6][0] and out[0][0] == 0.0 and not out[4].any()


# --- optimizer -----------------------------------------------------------------------


def test_at_ground_truth():
    scene = generate_scene(5, 50, seed=1)
    pb = scene_problem(scene)
    rep = optimize(pb)
    assert rep.final_cost < 1e-20
    assert rep.accepted <= 1


def test_converges_from_perturbation(backend):
    scene = generate_scene(8, 150, seed=2)
    pert = perturb_poses(scene, 2.0, 0.05)
    rng = np.random.default_rng(0)
    pb = scene_problem(scene, poses=pert, points=scene.points + 0.05 * rng.normal(size=scene.points.shape))
    R0 = pb.rotations[0].copy()
    t0 = pb.translations[0].copy()
    rep = optimize(pb)
    assert rep.final_cost < 1e-20
    assert np.all(np.diff(rep.costs) <= 0)
    np.testing.assert_array_equal(pb.rotations[0], R0)
    np.testing.assert_array_equal(pb.translations[0], t0)
    R, t, X = reanchor(pb, scene)
    for i, n in enumerate(scene.names):
        assert rotation_angle(R[i] @ scene.poses[n].rotation.T) < 1e-6
        assert np.abs(t[i] - scene.poses[n].translation).max() < 1e-6
        assert np.abs(R[i].T @ R[i] - np.eye(3)).max() < 1e-9
    assert np.abs(X - scene.points).max() < 1e-6


def test_fixed_blocks_untouched():
    scene = generate_scene(5, 60, seed=3)
    pert = perturb_poses(scene, 1.0, 0.02)
    pb = scene_problem(scene, poses=pert, fixed=(0, 2))
    pb.pt_fixed[:10] = True
    before = (pb.rotations[[0, 2]].copy(), pb.translations[[0, 2]].copy(), pb.points[:10].copy())
    optimize(pb)
    np.testing.assert_array_equal(pb.rotations[[0, 2]], before[0])
    np.testing.assert_array_equal(pb.translations[[0, 2]], before[1])
    np.testing.assert_array_equal(pb.points[:10], before[2])


def test_robust_cost_non_increasing():
    scene = generate_scene(6, 100, seed=4)
    pb = scene_problem(scene, poses=perturb_poses(scene, 2.0, 0.05), robustify=True)
    rng = np.random.default_rng(1)
    bad = rng.choice(len(pb.bearings), 30, replace=False)
    pb.bearings[bad] = rng.normal(size=(30, 3))
    pb.bearings[bad] /= np.linalg.norm(pb.bearings[bad], axis=1, keepdims=True)
    rep = optimize(pb)
    assert rep.accepted > 0
    assert np.all(np.diff(rep.costs) <= 0)
    assert rep.final_cost < rep.initial_cost


def test_backends_agree():
    scene = generate_scene(5, 80, seed=5)
    pert = perturb_poses(scene, 2.0, 0.05)
    results = []
    prev = kernels.backend()
    try:
        for b in kernels.available_backends():
            kernels.use_backend(b)
            pb = scene_problem(scene, poses=pert)
            optimize(pb, BAOptions(max_iters=5))
            results.append((pb.rotations, pb.translations, pb.points))
    finally:
        kernels.use_backend(prev)
    for other in results[1:]:
        for a, b in zip(results[0], other):
            assert np.abs(a - b).max() < 1e-9


def test_input_validation():
    scene = generate_scene(3, 10, seed=6)
    pb = scene_problem(scene)
    with pytest.raises(DomainError):
        BAProblem(pb.rotations, pb.translations, pb.points, pb.cam_idx, pb.pt_idx, pb.bearings, np.zeros(3, bool), pb.pt_fixed)
    with pytest.raises(DomainError):
        BAProblem(pb.rotations, pb.translations, pb.points, pb.cam_idx + 5, pb.pt_idx, pb.bearings, pb.cam_fixed, pb.pt_fixed)
    bad = scene_problem(scene)
    bad.points[0] = np.nan
    with pytest.raises(DomainError):
        optimize(bad)


def test_stall_reported():
    scene = generate_scene(3, 20, seed=7)
    pb = scene_problem(scene, poses=perturb_poses(scene, 5.0, 0.1))
    rep = optimize(pb, BAOptions(max_rejections=1, lambda_init=1e-12, lambda_max=1e-11, max_iters=50))
    # a single allowed rejection with a frozen tiny damping either converges or stalls, never loops
    assert rep.termination in {"stalled", "cost", "gradient", "converged", "max_iters"}
    assert np.all(np.diff(rep.costs) <= 0)
