"""Line-oriented text formats.

Matches file::

    im360-matches v1
    dims <image> <width> <height>
    pair <image_a> <image_b>
    <x_a> <y_a> <x_b> <y_b> <conf>
    ...

Tracks file::

    omnisfm-tracks v1
    grid <r>
    dims <image> <width> <height>
    track <image> <cell_x> <cell_y> <x> <y> [<image> <cell_x> <cell_y> <x> <y> ...]

Scene / pose file: ``pose <cam> qw qx qy qz tx ty tz`` and ``point <id> x y z``
lines (world-to-camera, unit quaternion). ``#`` lines are comments in all
formats.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError
from .geometry import ErpDims, Pose
from .matching import Observation, PairMatches, Track

MATCHES_HEADER = "im360-matches v1"
TRACKS_HEADER = "omnisfm-tracks v1"


def _fmt(x: float) -> str:
    return repr(float(x) + 0.0)  # folds -0.0


def _lines(path):
    path = Path(path)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line.split()


def _float(tok, lineno, path):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"not a number: {tok!r}", lineno, path) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value: {tok!r}", lineno, path)
    return v


def _dims(fields, lineno, path, dims):
    if len(fields) != 4:
        raise ParseError("expected 'dims <image> <width> <height>'", lineno, path)
    try:
        d = ErpDims(int(fields[2]), int(fields[3]))
    except ValueError as exc:
        raise ParseError(str(exc), lineno, path) from None
    name = fields[1]
    if name in dims and dims[name] != d:
        raise ParseError(f"conflicting dims for {name}", lineno, path)
    dims[name] = d


def read_matches(path):
    """Parse a matches file.

    Returns:
        ``(dims, pairs)``: image sizes and one :class:`PairMatches` per block.
        An empty file yields no pairs.

    Raises:
        ParseError: with the offending line number.
    """
    dims: dict[str, ErpDims] = {}
    pairs: list[PairMatches] = []
    cur = None
    rows: list[list[float]] = []
    seen_header = False

    def flush():
        if cur is not None:
            a = np.array(rows, dtype=np.float64).reshape(-1, 5)
            pairs.append(PairMatches(cur[0], cur[1], a[:, 0:2], a[:, 2:4], a[:, 4]))

    for lineno, f in _lines(path):
        if not seen_header:
            if " ".join(f) != MATCHES_HEADER:
                raise ParseError(f"missing '{MATCHES_HEADER}' header", lineno, path)
            seen_header = True
            continue
        if f[0] == "dims":
            _dims(f, lineno, path, dims)
        elif f[0] == "pair":
            if len(f) != 3:
                raise ParseError("expected 'pair <image_a> <image_b>'", lineno, path)
            if f[1] == f[2]:
                raise ParseError("a pair must join two distinct images", lineno, path)
            for im in f[1:]:
                if im not in dims:
                    raise ParseError(f"image {im} used before its dims line", lineno, path)
            flush()
            cur, rows = (f[1], f[2]), []
        else:
            if cur is None:
                raise ParseError("match line outside a pair block", lineno, path)
            if len(f) != 5:
                raise ParseError(f"expected 5 fields 'x_a y_a x_b y_b conf', got {len(f)}", lineno, path)
            v = [_float(tok, lineno, path) for tok in f]
            da, db = dims[cur[0]], dims[cur[1]]
            if not (0 <= v[0] <= da.width and 0 <= v[1] <= da.height and 0 <= v[2] <= db.width and 0 <= v[3] <= db.height):
                raise ParseError("match coordinate outside its image", lineno, path)
            if not 0 <= v[4] <= 1:
                raise ParseError("confidence outside [0, 1]", lineno, path)
            rows.append(v)
    flush()
    return dims, pairs


def write_matches(path, dims: dict[str, ErpDims], pairs: list[PairMatches]):
    out = [MATCHES_HEADER]
    for name in sorted(dims):
        out.append(f"dims {name} {dims[name].width} {dims[name].height}")
    for pm in pairs:
        out.append(f"pair {pm.image_a} {pm.image_b}")
        for (xa, ya), (xb, yb), c in zip(pm.xy_a, pm.xy_b, pm.confidence):
            out.append(f"{_fmt(xa)} {_fmt(ya)} {_fmt(xb)} {_fmt(yb)} {_fmt(c)}")
    Path(path).write_text("\n".join(out) + "\n")


def write_tracks(path, dims: dict[str, ErpDims], tracks: list[Track], grid: float):
    out = [TRACKS_HEADER, f"grid {_fmt(grid)}"]
    for name in sorted(dims):
        out.append(f"dims {name} {dims[name].width} {dims[name].height}")
    for tr in tracks:
        parts = ["track"]
        for im in tr.images:
            o = tr.observations[im]
            parts += [im, str(o.cell[0]), str(o.cell[1]), _fmt(o.xy[0]), _fmt(o.xy[1])]
        out.append(" ".join(parts))
    Path(path).write_text("\n".join(out) + "\n")


def read_tracks(path):
    """Parse a tracks file into ``(dims, tracks, grid)``."""
    dims: dict[str, ErpDims] = {}
    tracks: list[Track] = []
    grid = None
    seen_header = False
    for lineno, f in _lines(path):
        if not seen_header:
            if " ".join(f) != TRACKS_HEADER:
                raise ParseError(f"missing '{TRACKS_HEADER}' header", lineno, path)
            seen_header = True
        elif f[0] == "grid":
            if len(f) != 2:
                raise ParseError("expected 'grid <r>'", lineno, path)
            grid = _float(f[1], lineno, path)
        elif f[0] == "dims":
            _dims(f, lineno, path, dims)
        elif f[0] == "track":
            body = f[1:]
            if len(body) < 10 or len(body) % 5:
                raise ParseError("a track needs >= 2 observations of 5 fields each", lineno, path)
            obs = {}
            for k in range(0, len(body), 5):
                im = body[k]
                if im not in dims:
                    raise ParseError(f"image {im} used before its dims line", lineno, path)
                if im in obs:
                    raise ParseError(f"image {im} appears twice in one track", lineno, path)
                try:
                    cell = (int(body[k + 1]), int(body[k + 2]))
                except ValueError:
                    raise ParseError("cell indices must be integers", lineno, path) from None
                obs[im] = Observation(cell, (_float(body[k + 3], lineno, path), _float(body[k + 4], lineno, path)))
            tracks.append(Track(obs))
        else:
            raise ParseError(f"unknown record {f[0]!r}", lineno, path)
    return dims, tracks, grid


def write_scene(path, poses: dict[str, Pose], points=None, comments=()):
    """Write ``pose`` lines (sorted by name) and optional ``point`` lines."""
    out = [f"# {c}" for c in comments]
    for name in sorted(poses):
        p = poses[name]
        vals = list(p.quaternion()) + list(p.translation)
        out.append(f"pose {name} " + " ".join(_fmt(v) for v in vals))
    if points is not None:
        for i, X in enumerate(np.asarray(points).reshape(-1, 3)):
            out.append(f"point {i} {_fmt(X[0])} {_fmt(X[1])} {_fmt(X[2])}")
    Path(path).write_text("\n".join(out) + "\n")


def read_scene(path):
    """Parse pose/point lines into ``(poses, points)``; ``points`` may be empty."""
    poses: dict[str, Pose] = {}
    pts: dict[int, np.ndarray] = {}
    for lineno, f in _lines(path):
        if f[0] == "pose":
            if len(f) != 9:
                raise ParseError("expected 'pose <cam> qw qx qy qz tx ty tz'", lineno, path)
            if f[1] in poses:
                raise ParseError(f"duplicate pose {f[1]}", lineno, path)
            v = [_float(x, lineno, path) for x in f[2:]]
            try:
                poses[f[1]] = Pose.from_quaternion(v[:4], v[4:])
            except DomainError as exc:
                raise ParseError(str(exc), lineno, path) from None
        elif f[0] == "point":
            if len(f) != 5:
                raise ParseError("expected 'point <id> x y z'", lineno, path)
            try:
                pid = int(f[1])
            except ValueError:
                raise ParseError("point id must be an integer", lineno, path) from None
            pts[pid] = np.array([_float(x, lineno, path) for x in f[2:]])
        else:
            raise ParseError(f"unknown record {f[0]!r}", lineno, path)
    points = np.array([pts[k] for k in sorted(pts)]).reshape(-1, 3)
    return poses, points


def read_poses(path) -> dict[str, Pose]:
    return read_scene(path)[0]


def read_pairs(path) -> list[tuple[str, str]]:
    """``<image_a> <image_b>`` per line; order within a line does not matter."""
    pairs = []
    for lineno, f in _lines(path):
        if len(f) != 2 or f[0] == f[1]:
            raise ParseError("expected '<image_a> <image_b>'", lineno, path)
        pairs.append(tuple(sorted(f)))
    return pairs


def write_ply(path, points, colors=None, track_length=None):
    """ASCII PLY with ``x y z``, optional ``red green blue`` and ``track_length``."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = ["ply", "format ascii 1.0", f"element vertex {len(P)}"]
    out += [f"property float {c}" for c in "xyz"]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        out += [f"property uchar {c}" for c in ("red", "green", "blue")]
    if track_length is not None:
        track_length = np.asarray(track_length, dtype=np.int64).reshape(-1)
        out.append("property int track_length")
    out.append("end_header")
    for i, X in enumerate(P):
        row = [_fmt(X[0]), _fmt(X[1]), _fmt(X[2])]
        if colors is not None:
            row += [str(int(c)) for c in colors[i]]
        if track_length is not None:
            row.append(str(int(track_length[i])))
        out.append(" ".join(row))
    Path(path).write_text("\n".join(out) + "\n")


def read_ply(path):
    """Read back what :func:`write_ply` writes; returns ``(names, rows)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "ply":
        raise ParseError("not a PLY file", 1, path)
    names, n, k = [], 0, 1
    while lines[k] != "end_header":
        f = lines[k].split()
        if f[0] == "element":
            n = int(f[2])
        elif f[0] == "property":
            names.append(f[-1])
        k += 1
    rows = np.array([[float(x) for x in ln.split()] for ln in lines[k + 1 : k + 1 + n]]).reshape(n, len(names))
    return names, rows
