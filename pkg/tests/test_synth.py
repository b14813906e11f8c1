import hashlib
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from omnisfm.errors import DomainError
from omnisfm.formats import write_scene
from omnisfm.geometry import ErpDims, pixel_to_bearing, rotation_angle
from omnisfm.synth import SceneRng, generate_scene, observe, perturb_poses
from omnisfm.twoview import epipolar_residual, essential_from_pose

DATA = Path(__file__).parent / "data"
FIXTURE_SHA256 = "093c06ecb42f243b81b3128edc8fc0e2900ae602a954f1eb0c029b28fc9d6139"

# --- Philox4x64-10, written out in plain integers --------------------------------

_M = (1 << 64) - 1


def _philox_block(ctr, key):
    c, k = list(ctr), list(key)
    for _ in range(10):
        p0 = 0xD2E7470EE14C6C93 * c[0]
        p1 = 0xCA5A826395121157 * c[2]
        c = [(p1 >> 64) ^ c[1] ^ k[0], p1 & _M, (p0 >> 64) ^ c[3] ^ k[1], p0 & _M]
        k = [(k[0] + 0x9E3779B97F4A7C15) & _M, (k[1] + 0xBB67AE8584CAA73B) & _M]
    return c


def oracle_stream(seed, kind, index, n):
    key = (seed << 64) | (kind << 32) | index
    kk = [key & _M, key >> 64]
    out, ctr = [], 1  # the counter is bumped before the first block
    while len(out) < n:
        out += _philox_block([ctr & _M, ctr >> 64, 0, 0], kk)
        ctr += 1
    return out[:n]


@given(st.integers(0, 2**31), st.integers(0, 7), st.integers(0, 10**6))
@settings(max_examples=30)
def test_raw_stream_matches_oracle(seed, kind, index):
    assert [int(v) for v in SceneRng(seed, kind, index).raw(9)] == oracle_stream(seed, kind, index, 9)


def test_frozen_vectors():
    assert SceneRng(42, 1, 7).raw(4).tolist() == [
        15624810438745467061,
        9565797686426214089,
        17794492457708491873,
        12676779730033741688,
    ]
    assert SceneRng(0, 2, 0).uniform(3).tolist() == [0.910833685755556, 0.27436980322403104, 0.49987693699810076]
    assert SceneRng(5, 3, 1).normal(4).tolist() == [0.40472190714901496, 0.7946143025101112, 1.7110136914311422, 1.2368102353996413]
    assert SceneRng(9, 4, 2).choice(10, 4).tolist() == [6, 9, 5, 0]


def test_choice_distinct_and_in_range():
    for i in range(50):
        c = SceneRng(1, 4, i).choice(30, 12)
        assert len(set(c.tolist())) == 12 and c.min() >= 0 and c.max() < 30


def test_streams_independent_of_draw_order():
    a = SceneRng(3, 1, 5).uniform(6)
    SceneRng(3, 1, 4).uniform(100)
    assert np.array_equal(SceneRng(3, 1, 5).uniform(6), a)


# --- scenes ------------------------------------------------------------------------


def _scene_bytes(scene, comment):
    path = DATA / "_tmp_scene.txt"
    try:
        write_scene(path, scene.poses, scene.points, comments=[comment])
        return path.read_bytes()
    finally:
        path.unlink(missing_ok=True)


def test_fixture_reproduced_bytewise():
    scene = generate_scene(20, 1000, (8, 6, 3), seed=42)
    produced = _scene_bytes(scene, "cams 20 points 1000 room 8.0 6.0 3.0 seed 42")
    stored = (DATA / "acceptance_scene.txt").read_bytes()
    assert hashlib.sha256(stored).hexdigest() == FIXTURE_SHA256
    assert produced == stored


def test_generation_deterministic():
    a, b = generate_scene(6, 50, seed=11), generate_scene(6, 50, seed=11)
    assert np.array_equal(a.points, b.points)
    assert all(a.poses[n] == b.poses[n] for n in a.names)
    c = generate_scene(6, 50, seed=12)
    assert not np.array_equal(a.points, c.points)


def test_prefix_stability():
    # adding cameras or points does not move the existing ones
    a, b = generate_scene(4, 30, seed=5), generate_scene(7, 60, seed=5)
    assert np.array_equal(a.points, b.points[:30])
    assert all(a.poses[n] == b.poses[n] for n in a.names)


def test_minimal_scene_fully_visible():
    s = generate_scene(2, 8, seed=0)
    assert s.visibility.shape == (8, 2) and s.visibility.all()
    assert all(v == frozenset(s.names) for v in s.visible_sets())


def test_geometry_inside_room():
    s = generate_scene(10, 400, (8, 6, 3), seed=1)
    ext = np.array([8, 3, 6])
    assert np.all(s.points >= 0) and np.all(s.points <= ext)
    on_face = np.isclose(s.points, 0) | np.isclose(s.points, ext)
    assert np.all(on_face.any(axis=1))
    for n in s.names:
        c = s.poses[n].center
        assert np.all(c >= 0.1 * ext - 1e-12) and np.all(c <= 0.9 * ext + 1e-12)


@pytest.mark.parametrize("args", [(1, 20), (3, 7)])
def test_too_small_rejected(args):
    with pytest.raises(DomainError):
        generate_scene(*args)


@pytest.mark.parametrize("room", [(0, 6, 3), (8, -1, 3), (8, 6, float("nan")), (8, 6)])
def test_degenerate_room_rejected(room):
    with pytest.raises(DomainError):
        generate_scene(3, 20, room)


# --- observations --------------------------------------------------------------------

DIMS = ErpDims(640, 320)


def test_outlier_count():
    s = generate_scene(4, 57, seed=2)
    obs = observe(s, DIMS, outlier_frac=0.1)
    for lab in obs.labels:
        assert np.count_nonzero(lab < 0) == 5  # floor(0.1 * 57)
    with pytest.raises(DomainError):
        observe(s, DIMS, outlier_frac=1.0)


def test_noiseless_matches_are_epipolar():
    s = generate_scene(5, 100, seed=3)
    obs = observe(s, DIMS)
    idx = {n: i for i, n in enumerate(s.names)}
    for p in obs.pairs:
        pa, pb = s.poses[p.image_a], s.poses[p.image_b]
        rel = pb.compose(pa.inverse())
        E = essential_from_pose(rel.rotation, rel.translation)
        r = epipolar_residual(E, pixel_to_bearing(p.xy_a, DIMS), pixel_to_bearing(p.xy_b, DIMS))
        assert r.max() < 1e-12, (p.image_a, p.image_b, idx[p.image_a])


def test_noise_magnitude():
    s = generate_scene(20, 1000, seed=42)
    clean = pixel_to_bearing(observe(s, DIMS).pixels.reshape(-1, 2), DIMS)
    noisy = pixel_to_bearing(observe(s, DIMS, noise_sigma=0.5).pixels.reshape(-1, 2), DIMS)
    mean = np.arccos(np.clip(np.sum(clean * noisy, axis=1), -1, 1)).mean()
    assert mean == pytest.approx(0.5 * 2 * np.pi / 640, rel=0.2)
    assert mean == pytest.approx(0.0055150824716953, rel=1e-9)  # frozen measurement


def test_observe_deterministic():
    s = generate_scene(4, 40, seed=4)
    a = observe(s, DIMS, 0.5, 0.2)
    b = observe(s, DIMS, 0.5, 0.2)
    assert np.array_equal(a.pixels, b.pixels)
    for p, q in zip(a.pairs, b.pairs):
        assert np.array_equal(p.xy_b, q.xy_b)


# --- pose perturbation ------------------------------------------------------------


def test_perturb_zero_is_identity():
    s = generate_scene(5, 20, seed=6)
    out = perturb_poses(s, 0.0, 0.0)
    assert all(out[n] == s.poses[n] for n in s.names)


def test_perturb_keeps_first_camera():
    s = generate_scene(5, 20, seed=7)
    out = perturb_poses(s, 2.0, 0.05)
    assert out[s.names[0]] == s.poses[s.names[0]]
    assert all(out[n] != s.poses[n] for n in s.names[1:])


def test_perturb_angle_distribution():
    s = generate_scene(101, 8, seed=8)
    out = perturb_poses(s, 2.0, 0.05)
    ang = [np.degrees(rotation_angle(out[n].rotation @ s.poses[n].rotation.T)) for n in s.names[1:]]
    assert 1.2 <= np.mean(ang) <= 2.0
    shifts = [np.linalg.norm(out[n].translation - s.poses[n].translation) for n in s.names[1:]]
    assert np.allclose(shifts, 0.05 * s.diameter, rtol=1e-9)
