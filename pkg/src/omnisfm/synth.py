"""Synthetic indoor scenes with exact ground truth.

Randomness comes from :class:`SceneRng`, a thin layer over the Philox4x64-10
counter-based generator:

  - stream key = ``seed * 2**64 + kind * 2**32 + index`` (low word first)
  - the 256-bit counter is incremented before each block, so the first block
    is computed at counter 1; each block yields its four words in order
  - uniform double = ``(raw >> 11) * 2**-53`` from each raw 64-bit output
  - normals by Box-Muller on consecutive uniform pairs ``(a, b)``:
    ``sqrt(-2 ln(1 - a)) * (cos(2 pi b), sin(2 pi b))``

Every entity (camera, point, camera noise, pair outliers, pose perturbation)
draws from its own stream, so results do not depend on generation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import ErpDims, Pose, bearing_to_pixel, orthonormalize, project_point, so3_exp
from .matching import PairMatches

# stream kinds
CAMERA, POINT, NOISE, OUTLIER, PERTURB = 1, 2, 3, 4, 5


class SceneRng:
    """Deterministic per-entity random stream (see module docstring)."""

    def __init__(self, seed: int, kind: int, index: int = 0):
        if not (0 <= seed < 2**64 and 0 <= kind < 2**32 and 0 <= index < 2**32):
            raise DomainError("stream identifiers out of range")
        key = (int(seed) << 64) | (int(kind) << 32) | int(index)
        self._bits = np.random.Philox(key=key)

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n)

    def uniform(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        ab = self.uniform(2 * m).reshape(m, 2)
        rad = np.sqrt(-2.0 * np.log1p(-ab[:, 0]))
        ang = 2.0 * np.pi * ab[:, 1]
        return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1).ravel()[:n]

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)`` by partial Fisher-Yates."""
        idx = np.arange(n)
        u = self.uniform(k)
        for i in range(k):
            j = i + min(int(u[i] * (n - i)), n - i - 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]


def random_rotation(rng: SceneRng) -> np.ndarray:
    q = rng.normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return orthonormalize(R)


@dataclass(eq=False)
class GroundTruthScene:
    """Cameras and wall points inside an axis-aligned room.

    ``room`` is (length, width, height); the room spans ``[0, length]`` in x,
    ``[0, height]`` in y (up) and ``[0, width]`` in z.
    """

    names: list[str]
    poses: dict[str, Pose]
    points: np.ndarray
    visibility: np.ndarray  # (n_points, n_cams) bool
    room: tuple[float, float, float]
    seed: int

    @property
    def extent(self) -> np.ndarray:
        L, Wd, Ht = self.room
        return np.array([L, Ht, Wd], dtype=np.float64)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extent))

    def visible_sets(self) -> list[frozenset[str]]:
        return [frozenset(self.names[c] for c in np.flatnonzero(v)) for v in self.visibility]


def camera_name(i: int) -> str:
    return f"cam{i:03d}"


def generate_scene(
    n_cams: int,
    n_points: int,
    room=(8.0, 6.0, 3.0),
    seed: int = 0,
    margin: float = 0.1,
) -> GroundTruthScene:
    """Sample cameras inside the room and points on its six faces.

    Camera centers are uniform in the room shrunk by ``margin`` (a fraction of
    each extent) with uniformly random orientation. Points are uniform over
    the wall, floor and ceiling area. The room is convex, so every camera sees
    every point.

    Raises:
        DomainError: fewer than 2 cameras or 8 points, or degenerate room.
    """
    if n_cams < 2 or n_points < 8:
        raise DomainError("need n_cams >= 2 and n_points >= 8")
    room = tuple(float(v) for v in room)
    if len(room) != 3 or not all(np.isfinite(v) and v > 0 for v in room):
        raise DomainError(f"room dims must be three positive numbers, got {room}")
    if not 0 <= margin < 0.5:
        raise DomainError("margin must lie in [0, 0.5)")
    ext = np.array([room[0], room[2], room[1]])

    names = [camera_name(i) for i in range(n_cams)]
    poses = {}
    for i, name in enumerate(names):
        rng = SceneRng(seed, CAMERA, i)
        center = ext * (margin + (1 - 2 * margin) * rng.uniform(3))
        R = random_rotation(rng)
        poses[name] = Pose(R, -R @ center)

    # faces as (fixed axis, fixed value, the two free axes)
    faces = []
    for axis in range(3):
        free = [a for a in range(3) if a != axis]
        area = ext[free[0]] * ext[free[1]]
        faces += [(axis, 0.0, free, area), (axis, ext[axis], free, area)]
    cum = np.cumsum([f[3] for f in faces])
    cum /= cum[-1]
    points = np.empty((n_points, 3))
    for j in range(n_points):
        u = SceneRng(seed, POINT, j).uniform(3)
        axis, value, free, _ = faces[min(int(np.searchsorted(cum, u[0], side="right")), 5)]
        points[j, axis] = value
        points[j, free[0]] = u[1] * ext[free[0]]
        points[j, free[1]] = u[2] * ext[free[1]]

    visibility = np.ones((n_points, n_cams), dtype=bool)
    return GroundTruthScene(names, poses, points, visibility, room, int(seed))


@dataclass(eq=False)
class SyntheticMatches:
    pairs: list[PairMatches]
    labels: list[np.ndarray]  # per pair: true point index, -1 for outliers
    pixels: np.ndarray  # (n_cams, n_points, 2) observed (noisy) pixels
    dims: ErpDims


def observe(
    scene: GroundTruthScene,
    dims: ErpDims,
    noise_sigma: float = 0.0,
    outlier_frac: float = 0.0,
    seed: int | None = None,
) -> SyntheticMatches:
    """Pairwise correspondences for every covisible camera pair.

    Each (camera, point) observation gets one Gaussian pixel offset shared by
    all pairs that use it. In each pair, ``floor(outlier_frac * n)`` matches
    have their second endpoint replaced by a uniformly random pixel.
    """
    if not 0 <= outlier_frac < 1:
        raise DomainError("outlier_frac must lie in [0, 1)")
    if noise_sigma < 0:
        raise DomainError("noise_sigma must be non-negative")
    seed = scene.seed if seed is None else seed
    n_cams = len(scene.names)
    pixels = np.empty((n_cams, len(scene.points), 2))
    for c, name in enumerate(scene.names):
        px = bearing_to_pixel(project_point(scene.points, scene.poses[name]), dims)
        if noise_sigma > 0:
            px = px + noise_sigma * SceneRng(seed, NOISE, c).normal(2 * len(px)).reshape(-1, 2)
        px[:, 0] = np.mod(px[:, 0], dims.width)
        px[:, 1] = np.clip(px[:, 1], 0.0, dims.height)
        pixels[c] = px

    pairs, labels = [], []
    k = 0
    for a in range(n_cams):
        for b in range(a + 1, n_cams):
            shared = np.flatnonzero(scene.visibility[:, a] & scene.visibility[:, b])
            if len(shared) == 0:
                continue
            xa = pixels[a, shared].copy()
            xb = pixels[b, shared].copy()
            lab = shared.copy()
            n_out = int(np.floor(outlier_frac * len(shared)))
            if n_out:
                rng = SceneRng(seed, OUTLIER, k)
                idx = rng.choice(len(shared), n_out)
                u = rng.uniform(2 * n_out).reshape(-1, 2)
                xb[idx] = u * [dims.width, dims.height]
                lab[idx] = -1
            pairs.append(PairMatches(scene.names[a], scene.names[b], xa, xb, np.ones(len(shared))))
            labels.append(lab)
            k += 1
    return SyntheticMatches(pairs, labels, pixels, dims)


def perturb_poses(
    scene: GroundTruthScene, rot_sigma_deg: float, trans_frac: float, seed: int | None = None
) -> dict[str, Pose]:
    """Copy of the poses with random rotation and translation offsets.

    Every camera but the first is rotated by a random axis with angle drawn
    from ``|N(0, rot_sigma)|`` and shifted by ``trans_frac * diameter`` in a
    random direction.
    """
    seed = scene.seed if seed is None else seed
    out = {}
    for i, name in enumerate(scene.names):
        pose = scene.poses[name]
        if i == 0 or (rot_sigma_deg == 0 and trans_frac == 0):
            out[name] = pose
            continue
        rng = SceneRng(seed, PERTURB, i)
        axis = rng.normal(3)
        axis /= np.linalg.norm(axis)
        angle = abs(rng.normal(1)[0]) * np.radians(rot_sigma_deg)
        direction = rng.normal(3)
        direction /= np.linalg.norm(direction)
        R = orthonormalize(so3_exp(axis * angle) @ pose.rotation)
        t = pose.translation + trans_frac * scene.diameter * direction
        out[name] = Pose(R, t)
    return out
