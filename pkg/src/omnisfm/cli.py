"""Command-line front end: ``omnisfm <command> ...``.

Exit status is 0 on success (partial registration included), 2 for bad input
and 3 when the pipeline itself fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from itertools import combinations
from pathlib import Path

import numpy as np

from . import formats
from .config import Config, load_config
from .cubemap import FACE_IDS, erp_to_cubemap
from .errors import DomainError, OmniSfmError, ParseError
from .evaluation import report
from .geometry import ErpDims
from .kernels import sample_bilinear_wrap
from .matching import PairMatches, build_tracks, quantize_matches
from .sfm import reconstruct, verify_pairs
from .synth import generate_scene, observe

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PIPELINE = 3

log = logging.getLogger("omnisfm")


class PipelineFailure(Exception):
    pass


def _config(args) -> Config:
    path = getattr(args, "config", None)
    cfg = load_config(path) if path else Config()
    over = {k: getattr(args, k) for k in ("seed", "threads") if hasattr(args, k)}
    return cfg.with_overrides(**over) if over else cfg


def _executor(cfg: Config):
    return ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else nullcontext(None)


def _out_path(p) -> Path:
    p = Path(p)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# -- tracks ------------------------------------------------------------------


def cmd_tracks(args, cfg: Config) -> int:
    dims, pairs = formats.read_matches(args.matches)
    quantized = [quantize_matches(pm, cfg.grid) for pm in pairs]
    ts = build_tracks(quantized)
    formats.write_tracks(_out_path(args.output), dims, ts.tracks, cfg.grid)
    if not pairs:
        print("warning: no matches in input, wrote 0 tracks", file=sys.stderr)
    print(f"tracks = {len(ts.tracks)}")
    print(f"matches = {ts.n_matches}")
    print(f"dropped_conflicts = {ts.n_dropped}")
    return EXIT_OK


# -- reconstruct ---------------------------------------------------------------


def pairs_from_tracks(tracks) -> list[PairMatches]:
    """Expand tracks into pairwise matches (one per image pair in each track)."""
    acc: dict[tuple[str, str], list] = {}
    for tr in tracks:
        for a, b in combinations(tr.images, 2):
            acc.setdefault((a, b), []).append((*tr.observations[a].xy, *tr.observations[b].xy))
    out = []
    for (a, b), rows in sorted(acc.items()):
        m = np.array(rows, dtype=np.float64)
        out.append(PairMatches(a, b, m[:, :2], m[:, 2:], np.ones(len(m))))
    return out


def _restrict(pairs: list[PairMatches], allowed) -> list[PairMatches]:
    allowed = set(allowed)
    return [pm for pm in pairs if tuple(sorted((pm.image_a, pm.image_b))) in allowed]


def _load_rgb(path: Path, dims: ErpDims):
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    if arr.shape[:2] != (dims.height, dims.width):
        raise DomainError(f"{path}: size {arr.shape[1]}x{arr.shape[0]} does not match dims {dims.width}x{dims.height}")
    return arr


def _colors(rec, tracks, dims, image_dir: Path):
    """Color each point from the first of its views whose PNG exists."""
    cache: dict[str, np.ndarray | None] = {}

    def img(name):
        if name not in cache:
            p = image_dir / f"{name}.png"
            cache[name] = _load_rgb(p, dims[name]) if p.exists() else None
        return cache[name]

    views = rec.point_views()
    for tid, pt in rec.points.items():
        for name in sorted(views[tid]):
            arr = img(name)
            if arr is None:
                continue
            x, y = tracks[tid].observations[name].xy
            rgb = sample_bilinear_wrap(arr, np.array([x]), np.array([y]))[0]
            pt.color = tuple(int(v) for v in np.clip(np.rint(rgb), 0, 255))
            break


def cmd_reconstruct(args, cfg: Config) -> int:
    t_start = time.perf_counter()
    stage: dict[str, float] = {}

    t0 = time.perf_counter()
    if args.matches:
        dims, pairs = formats.read_matches(args.matches)
    else:
        dims, tracks_in, _ = formats.read_tracks(args.tracks)
        pairs = pairs_from_tracks(tracks_in)
    if args.pairs:
        pairs = _restrict(pairs, formats.read_pairs(args.pairs))
    stage["read"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    quantized = [quantize_matches(pm, cfg.grid) for pm in pairs]
    with _executor(cfg) as ex:
        geometries, inlier_pairs, failures = verify_pairs(quantized, dims, cfg, executor=ex)
    stage["verify"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ts = build_tracks(inlier_pairs)
    stage["tracks"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rec = reconstruct(dims, geometries, ts.tracks, cfg)
    stage["reconstruct"] = time.perf_counter() - t0

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_lines = [
        f"images = {len(dims)}",
        f"pairs = {len(pairs)}",
        f"verified_pairs = {len(geometries)}",
        f"tracks = {len(ts.tracks)}",
        f"dropped_conflicts = {ts.n_dropped}",
        f"registered = {len(rec.poses)} / {len(dims)}",
        f"points = {len(rec.points)}",
    ]
    log_lines += [f"rejected_pair {a} {b}: {why}" for (a, b), why in sorted(failures.items())]
    log_lines += [f"unregistered {im}" for im in rec.unregistered]
    log_lines += [f"diagnostic {d}" for d in rec.diagnostics]

    if not rec.poses:
        log_lines.append(f"time_total = {time.perf_counter() - t_start:.3f}")
        (out / "reconstruct.log").write_text("\n".join(log_lines) + "\n")
        raise PipelineFailure("; ".join(rec.diagnostics) or "reconstruction failed")

    t0 = time.perf_counter()
    if args.images:
        _colors(rec, ts.tracks, dims, Path(args.images))
    formats.write_scene(out / "poses.txt", rec.poses)
    tids = sorted(rec.points)
    views = rec.point_views()
    pts = [rec.points[t] for t in tids]
    colors = None
    if pts and all(p.color is not None for p in pts):
        colors = [p.color for p in pts]
    formats.write_ply(
        out / "points.ply",
        [p.position for p in pts],
        colors=colors,
        track_length=[len(views[t]) for t in tids],
    )
    stage["write"] = time.perf_counter() - t0

    log_lines += [f"time_{k} = {v:.3f}" for k, v in stage.items()]
    log_lines += [f"time_sfm_{k} = {v:.3f}" for k, v in sorted(rec.timings.items())]
    log_lines.append(f"time_total = {time.perf_counter() - t_start:.3f}")
    (out / "reconstruct.log").write_text("\n".join(log_lines) + "\n")

    print(f"registered = {len(rec.poses)} / {len(dims)}")
    print(f"points = {len(rec.points)}")
    for im in rec.unregistered:
        print(f"unregistered {im}")
    return EXIT_OK


# -- cubemap -------------------------------------------------------------------


def cmd_cubemap(args, cfg: Config) -> int:
    from PIL import Image

    try:
        with Image.open(args.image) as im:
            arr = np.asarray(im)
    except OSError as exc:
        raise DomainError(f"cannot read image {args.image}: {exc}") from None
    faces = erp_to_cubemap(arr, args.face_size)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for f in faces:
        Image.fromarray(f.image).save(out / f"{f.face_id}.png")
    formats.write_scene(out / "faces.txt", {f.face_id: f.virtual_pose for f in faces})
    print(f"faces = {' '.join(FACE_IDS)}")
    return EXIT_OK


# -- synth ---------------------------------------------------------------------


def cmd_synth(args, cfg: Config) -> int:
    scene = generate_scene(args.cams, args.points, tuple(args.room), seed=cfg.seed)
    dims = ErpDims(args.width, args.width // 2)
    obs = observe(scene, dims, args.noise, args.outliers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_scene(
        out / "scene.txt",
        scene.poses,
        scene.points,
        comments=[f"cams {args.cams} points {args.points} room {' '.join(map(repr, args.room))} seed {cfg.seed}"],
    )
    formats.write_matches(out / "matches.txt", {n: dims for n in scene.names}, obs.pairs)
    print(f"cameras = {args.cams}")
    print(f"pairs = {len(obs.pairs)}")
    print(f"matches = {sum(len(p) for p in obs.pairs)}")
    return EXIT_OK


# -- evaluate ------------------------------------------------------------------


def cmd_evaluate(args, cfg: Config) -> int:
    est = formats.read_poses(args.estimate)
    gt = formats.read_poses(args.ground_truth)
    rep = report(est, gt, taus=tuple(args.tau))
    text = rep.text()
    if args.output:
        _out_path(args.output).write_text(text)
    print(text, end="")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's unset flag from clobbering one given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="worker cap; results do not depend on it")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="omnisfm", description="Structure from motion for 360 degree panoramas.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("tracks", parents=[common], help="quantize matches and link them into tracks")
    s.add_argument("matches", type=Path)
    s.add_argument("-o", "--output", type=Path, required=True)
    s.set_defaults(func=cmd_tracks)

    s = sub.add_parser("reconstruct", parents=[common], help="verify pairs and run incremental SfM")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--matches", type=Path)
    src.add_argument("--tracks", type=Path)
    s.add_argument("--pairs", type=Path, help="restrict verification to the listed image pairs")
    s.add_argument("--images", type=Path, help="directory of <image>.png panoramas for point colors")
    s.add_argument("-o", "--out-dir", type=Path, required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("cubemap", parents=[common], help="split a panorama into six cube faces")
    s.add_argument("image", type=Path)
    s.add_argument("--face-size", type=int, required=True)
    s.add_argument("-o", "--out-dir", type=Path, required=True)
    s.set_defaults(func=cmd_cubemap)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic room scene and its matches")
    s.add_argument("--cams", type=int, default=20)
    s.add_argument("--points", type=int, default=1000)
    s.add_argument("--room", type=float, nargs=3, default=[8.0, 6.0, 3.0], metavar=("L", "W", "H"))
    s.add_argument("--width", type=int, default=640, help="panorama width; height is half")
    s.add_argument("--noise", type=float, default=0.5, help="pixel noise sigma")
    s.add_argument("--outliers", type=float, default=0.1, help="outlier fraction per pair")
    s.add_argument("-o", "--out-dir", type=Path, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("evaluate", parents=[common], help="compare estimated poses with ground truth")
    s.add_argument("estimate", type=Path)
    s.add_argument("ground_truth", type=Path)
    s.add_argument("--tau", type=float, nargs="+", default=[3.0, 5.0, 10.0])
    s.add_argument("-o", "--output", type=Path)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except PipelineFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (ParseError, DomainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OmniSfmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
