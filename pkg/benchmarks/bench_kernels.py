"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Inputs are built from the synthetic room scene (20 cameras, 1000 points),
so sizes match one bundle adjustment iteration of the acceptance run.
"""

import argparse
import time

import numpy as np

from omnisfm import kernels
from omnisfm.bundle import BAProblem, _group_by_point, optimize
from omnisfm.geometry import ErpDims, pixel_to_bearing, project_point
from omnisfm.synth import generate_scene, observe, perturb_poses
from omnisfm.twoview import essential_from_pose


def _inputs():
    scene = generate_scene(20, 1000, (8.0, 6.0, 3.0), seed=42)
    names = scene.names
    R = np.array([scene.poses[n].rotation for n in names])
    t = np.array([scene.poses[n].translation for n in names])
    cam_idx = np.repeat(np.arange(len(names)), len(scene.points)).astype(np.int64)
    pt_idx = np.tile(np.arange(len(scene.points)), len(names)).astype(np.int64)
    obs = np.concatenate([project_point(scene.points, scene.poses[n]) for n in names])
    X = scene.points + 0.01

    lin = kernels.ba_linearize(R, t, X, cam_idx, pt_idx, obs, 0.02**2, 1e-9)
    Hll = lin[2] + 1e-6 * np.eye(3)
    Dinv = np.linalg.inv(Hll)
    cam_var = np.arange(len(names), dtype=np.int64) - 1  # camera 0 fixed
    pt_free = np.ones(len(X), dtype=bool)
    order, offsets = _group_by_point(pt_idx, len(X))
    schur_args = (lin[3], Dinv, lin[5], cam_idx, pt_idx, cam_var, pt_free, len(names) - 1, order, offsets)

    dims = ErpDims(640, 320)
    m = observe(scene, dims).pairs[0]
    u1, u2 = pixel_to_bearing(m.xy_a, dims), pixel_to_bearing(m.xy_b, dims)
    pa, pb = scene.poses[m.image_a], scene.poses[m.image_b]
    E = essential_from_pose(pb.compose(pa.inverse()).rotation, pb.compose(pa.inverse()).translation)

    rng = np.random.default_rng(0)
    image = rng.random((1024, 2048, 3))
    cols, rows = rng.random(1_000_000) * 2048, rng.random(1_000_000) * 1024

    return {
        "epipolar_residuals (1k pairs)": (lambda: kernels.epipolar_residuals(E, u1, u2)),
        "ba_linearize (20k obs)": (lambda: kernels.ba_linearize(R, t, X, cam_idx, pt_idx, obs, 0.02**2, 1e-9)),
        "schur_reduce (20k obs)": (lambda: kernels.schur_reduce(*schur_args)),
        "sample_bilinear_wrap (1M px)": (lambda: kernels.sample_bilinear_wrap(image, cols, rows)),
        "full BA solve": (lambda: _ba(scene)),
    }


def _ba(scene):
    names = scene.names
    pert = perturb_poses(scene, 2.0, 0.05, seed=1)
    cam_idx = np.repeat(np.arange(len(names)), len(scene.points))
    pt_idx = np.tile(np.arange(len(scene.points)), len(names))
    obs = np.concatenate([project_point(scene.points, scene.poses[n]) for n in names])
    fixed = np.zeros(len(names), dtype=bool)
    fixed[:2] = True
    pb = BAProblem(
        np.array([pert[n].rotation for n in names]),
        np.array([pert[n].translation for n in names]),
        scene.points.copy(),
        cam_idx,
        pt_idx,
        obs,
        cam_fixed=fixed,
        pt_fixed=np.zeros(len(scene.points), dtype=bool),
    )
    optimize(pb)


def _time(fn, repeat):
    fn()  # warm-up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    prev = kernels.backend()
    rows = {}
    try:
        for b in backends:
            kernels.use_backend(b)
            for name, fn in _inputs().items():
                rows.setdefault(name, {})[b] = _time(fn, args.repeat)
    finally:
        kernels.use_backend(prev)

    head = f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends)
    if len(backends) > 1:
        head += f"{'speedup':>10s}"
    print(head)
    print("-" * len(head))
    for name, t in rows.items():
        line = f"{name:32s}" + "".join(f"{1e3 * t[b]:10.2f}ms" for b in backends)
        if "cython" in t and "python" in t:
            line += f"{t['python'] / t['cython']:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
