"""Match quantization and multiview track construction.

Dense matchers return sub-pixel locations that differ slightly from pair to
pair. Snapping both endpoints to a grid of cell size ``r`` gives every image
a discrete keypoint set, after which tracks follow from union-find over the
pairwise matches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

DEFAULT_GRID = 4.0


def round_half_away(v):
    """Round to nearest integer, ties away from zero (exact for all floats)."""
    v = np.asarray(v, dtype=np.float64)
    q = np.trunc(v)
    frac = v - q
    return q + np.where(np.abs(frac) >= 0.5, np.sign(v), 0.0)


def quantize(x, r: float):
    """Snap ``x`` to the nearest multiple of ``r``.

    Raises:
        DomainError: ``r <= 0``.
    """
    if not r > 0:
        raise DomainError(f"grid cell size must be positive, got {r}")
    out = round_half_away(np.asarray(x, dtype=np.float64) / r) * r
    return float(out) if out.ndim == 0 else out


def cell_index(x, r: float) -> np.ndarray:
    """Integer grid cell of each coordinate."""
    if not r > 0:
        raise DomainError(f"grid cell size must be positive, got {r}")
    return round_half_away(np.asarray(x, dtype=np.float64) / r).astype(np.int64)


@dataclass(eq=False)
class PairMatches:
    """Correspondences between two images.

    ``xy_a``/``xy_b`` are continuous ERP pixel coordinates. Once the matches
    have gone through :func:`quantize_matches`, ``grid`` holds the cell size
    and the coordinates are the representatives of their cells.
    """

    image_a: str
    image_b: str
    xy_a: np.ndarray
    xy_b: np.ndarray
    confidence: np.ndarray
    grid: float | None = None

    def __post_init__(self):
        if self.image_a == self.image_b:
            raise DomainError(f"pair must join two distinct images, got {self.image_a!r} twice")
        self.xy_a = np.asarray(self.xy_a, dtype=np.float64).reshape(-1, 2)
        self.xy_b = np.asarray(self.xy_b, dtype=np.float64).reshape(-1, 2)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if not (len(self.xy_a) == len(self.xy_b) == len(self.confidence)):
            raise DomainError("match arrays have inconsistent lengths")
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise DomainError("match confidence must lie in [0, 1]")

    def __len__(self):
        return len(self.confidence)

    @property
    def cells_a(self) -> np.ndarray:
        return cell_index(self.xy_a, self._grid())

    @property
    def cells_b(self) -> np.ndarray:
        return cell_index(self.xy_b, self._grid())

    def _grid(self):
        if self.grid is None:
            raise DomainError("matches have not been quantized")
        return self.grid


def quantize_matches(pm: PairMatches, r: float = DEFAULT_GRID) -> PairMatches:
    """Snap both endpoints to the grid and merge duplicates.

    Matches landing on the same ``(cell_a, cell_b)`` pair are merged into the
    highest-confidence one (earliest on ties), whose continuous coordinates
    become the representative. Survivors keep their input order.
    """
    if not r > 0:
        raise DomainError(f"grid cell size must be positive, got {r}")
    n = len(pm)
    if n == 0:
        return PairMatches(pm.image_a, pm.image_b, pm.xy_a, pm.xy_b, pm.confidence, grid=float(r))
    ca = cell_index(pm.xy_a, r)
    cb = cell_index(pm.xy_b, r)
    keys = np.concatenate([ca, cb], axis=1)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    # best member per group: highest confidence, then lowest index
    order = np.lexsort((np.arange(n), -pm.confidence, inverse))
    first = np.ones(n, dtype=bool)
    first[1:] = inverse[order[1:]] != inverse[order[:-1]]
    keep = np.sort(order[first])
    return PairMatches(
        pm.image_a, pm.image_b, pm.xy_a[keep], pm.xy_b[keep], pm.confidence[keep], grid=float(r)
    )


@dataclass(frozen=True)
class Observation:
    cell: tuple[int, int]
    xy: tuple[float, float]


@dataclass(eq=False)
class Track:
    """One multiview chain of keypoints; at most one observation per image."""

    observations: dict[str, Observation] = field(default_factory=dict)

    def __len__(self):
        return len(self.observations)

    @property
    def images(self):
        return sorted(self.observations)

    def key(self):
        return tuple(sorted((img, o.cell) for img, o in self.observations.items()))


@dataclass
class TrackSet:
    tracks: list[Track]
    n_matches: int
    n_dropped: int


class _UnionFind:
    def __init__(self):
        self.parent = []
        self.members = []  # root -> {image: node}

    def add(self, image):
        node = len(self.parent)
        self.parent.append(node)
        self.members.append({image: node})
        return node

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> bool:
        """Merge the sets of ``a`` and ``b`` unless they share an image."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return True
        ma, mb = self.members[ra], self.members[rb]
        if len(ma) < len(mb):
            ra, rb, ma, mb = rb, ra, mb, ma
        if any(img in ma for img in mb):
            return False
        self.parent[rb] = ra
        ma.update(mb)
        self.members[rb] = None
        return True


def build_tracks(all_pairs: list[PairMatches]) -> TrackSet:
    """Link quantized pairwise matches into tracks.

    Pairs are processed in lexicographic ``(image_a, image_b)`` order and
    matches in stored order. A match whose union would put two different
    cells of one image into the same track is dropped and counted.

    Raises:
        DomainError: pairs were quantized with different grids, or not at all.
    """
    grids = {pm.grid for pm in all_pairs}
    if None in grids:
        raise DomainError("build_tracks needs quantized matches")
    if len(grids) > 1:
        raise DomainError(f"matches quantized with different grids: {sorted(grids)}")

    uf = _UnionFind()
    nodes: dict[tuple[str, int, int], int] = {}
    keys: list[tuple[str, int, int]] = []
    rep: list[tuple[float, float, float]] = []  # (confidence, x, y) representative per node

    def node_of(image, cell, xy, conf):
        k = (image, int(cell[0]), int(cell[1]))
        idx = nodes.get(k)
        if idx is None:
            idx = uf.add(image)
            nodes[k] = idx
            keys.append(k)
            rep.append((conf, float(xy[0]), float(xy[1])))
        elif conf > rep[idx][0]:
            rep[idx] = (conf, float(xy[0]), float(xy[1]))
        return idx

    n_matches = dropped = 0
    for pm in sorted(all_pairs, key=lambda p: (p.image_a, p.image_b)):
        ca, cb = pm.cells_a, pm.cells_b
        for i in range(len(pm)):
            n_matches += 1
            conf = float(pm.confidence[i])
            a = node_of(pm.image_a, ca[i], pm.xy_a[i], conf)
            b = node_of(pm.image_b, cb[i], pm.xy_b[i], conf)
            if not uf.union(a, b):
                dropped += 1

    groups: dict[int, list[int]] = {}
    for idx in range(len(keys)):
        groups.setdefault(uf.find(idx), []).append(idx)
    tracks = []
    for members in groups.values():
        if len(members) < 2:
            continue
        obs = {}
        for idx in members:
            image, cx, cy = keys[idx]
            obs[image] = Observation((cx, cy), rep[idx][1:])
        tracks.append(Track(obs))
    tracks.sort(key=Track.key)
    return TrackSet(tracks, n_matches, dropped)
