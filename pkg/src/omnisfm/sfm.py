"""Incremental reconstruction driver.

The first registered image is the world frame and the initial pair's
baseline is the unit of length; both are restored after every global bundle
adjustment.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .bundle import BAOptions, BAProblem, optimize
from .config import Config
from .errors import (
    CheiralityError,
    InitializationError,
    InsufficientDataError,
    RegistrationError,
    TriangulationError,
    VerificationError,
)
from .geometry import ErpDims, Pose, angular_residual, pixel_to_bearing
from .matching import PairMatches, Track
from .resection import register_image as resect
from .triangulation import TriangulationGates, check_point, midpoint, triangulate
from .twoview import TwoViewGeometry, ransac_two_view

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Point3D:
    position: np.ndarray
    track_id: int
    error: float = 0.0  # mean angular reprojection error, radians
    color: tuple[int, int, int] | None = None


@dataclass(eq=False)
class Reconstruction:
    poses: dict[str, Pose] = field(default_factory=dict)
    points: dict[int, Point3D] = field(default_factory=dict)
    observations: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    registration_order: list[str] = field(default_factory=list)
    images: list[str] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def unregistered(self) -> list[str]:
        return [im for im in self.images if im not in self.poses]

    def point_views(self) -> dict[int, list[str]]:
        views: dict[int, list[str]] = {tid: [] for tid in self.points}
        for image, tid in self.observations:
            views[tid].append(image)
        return views


def select_init_pair(pair_geometries: dict[tuple[str, str], TwoViewGeometry], min_angle_deg: float = 2.0):
    """Seed pair: most inliers among pairs whose median ray angle reaches
    ``min_angle_deg``; failing that, the pair with the widest median angle.

    Raises:
        InitializationError: no verified pairs.
    """
    if not pair_geometries:
        raise InitializationError("no verified image pairs")
    return _ranked_init_pairs(pair_geometries, min_angle_deg)[0]


def _ranked_init_pairs(pair_geometries, min_angle_deg):
    def key(item):
        pair, g = item
        wide = g.median_triangulation_angle >= min_angle_deg
        if wide:
            return (0, -g.n_inliers, -g.median_triangulation_angle, pair)
        return (1, -g.median_triangulation_angle, -g.n_inliers, pair)

    return [pair for pair, _ in sorted(pair_geometries.items(), key=key)]


def verify_pairs(pairs: list[PairMatches], dims: dict[str, ErpDims], config: Config, executor=None):
    """Run two-view RANSAC on every pair.

    Returns:
        ``(geometries, inlier_pairs, failures)``: geometry per ``(a, b)``,
        the inlier subset of each verified pair, and a reason per rejected pair.
    """
    jobs = sorted(pairs, key=lambda p: (p.image_a, p.image_b))
    root = np.random.SeedSequence(config.seed)
    seeds = root.spawn(len(jobs))

    def run(k):
        pm = jobs[k]
        try:
            u1 = pixel_to_bearing(pm.xy_a, dims[pm.image_a])
            u2 = pixel_to_bearing(pm.xy_b, dims[pm.image_b])
            return ransac_two_view(
                u1,
                u2,
                threshold=config.ransac_threshold,
                max_iters=config.ransac_max_iters,
                confidence=config.ransac_confidence,
                min_inliers=config.min_two_view_inliers,
                seed=seeds[k],
            )
        except (VerificationError, CheiralityError, InsufficientDataError) as exc:
            return exc

    results = list(executor.map(run, range(len(jobs)))) if executor else [run(k) for k in range(len(jobs))]
    geometries, inlier_pairs, failures = {}, [], {}
    for pm, res in zip(jobs, results):
        key = (pm.image_a, pm.image_b)
        if isinstance(res, Exception):
            failures[key] = f"{type(res).__name__}: {res}"
            continue
        geometries[key] = res
        m = res.inlier_mask
        inlier_pairs.append(PairMatches(pm.image_a, pm.image_b, pm.xy_a[m], pm.xy_b[m], pm.confidence[m], pm.grid))
    return geometries, inlier_pairs, failures


def audit(recon: Reconstruction, max_error: float, tol: float = 1e-9) -> list[str]:
    """List violations of the reconstruction invariants (empty when sound)."""
    problems = []
    if recon.registration_order:
        first = recon.poses.get(recon.registration_order[0])
        if first is None or not (np.array_equal(first.rotation, np.eye(3)) and not first.translation.any()):
            problems.append("first registered pose is not the identity")
    views = {}
    for (image, tid), u in recon.observations.items():
        if image not in recon.poses:
            problems.append(f"observation ({image}, {tid}) in unregistered image")
            continue
        if tid not in recon.points:
            problems.append(f"observation ({image}, {tid}) of missing point")
            continue
        views.setdefault(tid, []).append(image)
        pose = recon.poses[image]
        y = pose.transform(recon.points[tid].position)
        if float(y @ u) <= 0:
            problems.append(f"point {tid} behind camera {image}")
        n = np.linalg.norm(y)
        if n > 0 and angular_residual(u, y / n) > max_error + tol:
            problems.append(f"point {tid} reprojects beyond the gate in {image}")
    for tid in recon.points:
        if len(views.get(tid, ())) < 2:
            problems.append(f"point {tid} has fewer than two observations")
    return problems


class IncrementalMapper:
    """Stateful driver behind :func:`reconstruct`."""

    def __init__(self, images: dict[str, ErpDims], tracks: list[Track], config: Config):
        self.config = config
        self.dims = images
        self.gates = TriangulationGates(config.tri_min_angle_deg, config.max_reproj_error)
        self.recon = Reconstruction(images=sorted(images))
        self.track_bearings: list[dict[str, np.ndarray]] = []
        self.image_tracks: dict[str, list[int]] = {im: [] for im in images}
        for tid, tr in enumerate(tracks):
            obs = {}
            for image, o in tr.observations.items():
                if image not in images:
                    continue
                obs[image] = pixel_to_bearing(np.array(o.xy), images[image])
                self.image_tracks[image].append(tid)
            self.track_bearings.append(obs)
        self.excluded: set[tuple[str, int]] = set()
        self.rng = np.random.SeedSequence(config.seed)
        self.n_filtered = 0

    # -- bookkeeping -------------------------------------------------------

    def _views(self, tid):
        """Registered, non-excluded views of a track."""
        return [
            im
            for im in sorted(self.track_bearings[tid])
            if im in self.recon.poses and (im, tid) not in self.excluded
        ]

    def _set_point(self, tid, X, views, errors):
        rec = self.recon
        for im in list(self.track_bearings[tid]):
            rec.observations.pop((im, tid), None)
        for im in views:
            rec.observations[(im, tid)] = self.track_bearings[tid][im]
        rec.points[tid] = Point3D(np.asarray(X, dtype=np.float64), tid, float(np.mean(errors)))

    def _drop_point(self, tid):
        rec = self.recon
        rec.points.pop(tid, None)
        for im in self.track_bearings[tid]:
            rec.observations.pop((im, tid), None)

    def _check(self, stage):
        if not self.config.audit:
            return
        problems = audit(self.recon, self.config.max_reproj_error)
        if problems:
            raise AssertionError(f"audit failed after {stage}: {problems[:5]}")

    # -- triangulation -----------------------------------------------------

    def triangulate_track(self, tid) -> bool:
        """Triangulate a track from its registered views, trimming the worst
        view while the reprojection or cheirality test fails."""
        views = self._views(tid)
        while len(views) >= 2:
            u = np.array([self.track_bearings[tid][im] for im in views])
            R = np.array([self.recon.poses[im].rotation for im in views])
            t = np.array([self.recon.poses[im].translation for im in views])
            try:
                X, err = triangulate(u, R, t, self.gates)
            except TriangulationError as exc:
                if exc.reason not in ("reprojection", "cheirality") or len(views) == 2:
                    return False
                try:
                    X = midpoint(u, R, t)
                except TriangulationError:
                    return False
                y = np.einsum("nij,j->ni", R, X) + t
                score = np.where(np.sum(y * u, axis=1) <= 0, np.inf, 0.0)
                score = score + angular_residual(u, y / np.linalg.norm(y, axis=1, keepdims=True))
                worst = int(np.argmax(score))
                self.excluded.add((views[worst], tid))
                views = views[:worst] + views[worst + 1 :]
                continue
            self._set_point(tid, X, views, err)
            return True
        return False

    def triangulate_new(self, image=None) -> int:
        """Triangulate point-less tracks (only those seen by ``image`` if given)."""
        tids = self.image_tracks[image] if image is not None else range(len(self.track_bearings))
        made = 0
        for tid in tids:
            if tid not in self.recon.points and self.triangulate_track(tid):
                made += 1
        return made

    def extend_points(self, image) -> int:
        """Attach ``image``'s observations to existing points that reproject well."""
        pose = self.recon.poses[image]
        added = 0
        for tid in self.image_tracks[image]:
            pt = self.recon.points.get(tid)
            if pt is None or (image, tid) in self.excluded:
                continue
            u = self.track_bearings[tid][image]
            y = pose.transform(pt.position)
            n = np.linalg.norm(y)
            if n > 0 and y @ u > 0 and angular_residual(u, y / n) <= self.config.max_reproj_error:
                self.recon.observations[(image, tid)] = u
                added += 1
            else:
                self.excluded.add((image, tid))
        return added

    # -- filtering ---------------------------------------------------------

    def filter_points(self, tids=None, full=False) -> int:
        """Drop bad observations and points.

        Observations beyond the reprojection gate or behind the camera are
        excluded; points left with fewer than two views are removed. With
        ``full`` the complete triangulation acceptance test (including the
        parallax gate) is re-applied.
        """
        rec = self.recon
        views = rec.point_views()
        tids = list(rec.points) if tids is None else [t for t in tids if t in rec.points]
        removed = 0
        for tid in tids:
            vs = sorted(views.get(tid, []))
            X = rec.points[tid].position
            keep, errs = [], []
            for im in vs:
                u = self.track_bearings[tid][im]
                y = rec.poses[im].transform(X)
                n = np.linalg.norm(y)
                e = angular_residual(u, y / n) if n > 0 else np.pi
                if n > 0 and y @ u > 0 and e <= self.config.max_reproj_error:
                    keep.append(im)
                    errs.append(e)
                else:
                    self.excluded.add((im, tid))
            ok = len(keep) >= 2
            if ok and full:
                u = np.array([self.track_bearings[tid][im] for im in keep])
                R = np.array([rec.poses[im].rotation for im in keep])
                t = np.array([rec.poses[im].translation for im in keep])
                try:
                    check_point(X, u, R, t, self.gates)
                except TriangulationError:
                    ok = False
            if ok:
                if len(keep) != len(vs):
                    self._set_point(tid, X, keep, errs)
                else:
                    rec.points[tid].error = float(np.mean(errs))
            else:
                self._drop_point(tid)
                removed += 1
        self.n_filtered += removed
        return removed

    # -- bundle adjustment -------------------------------------------------

    def bundle_adjust(self, free_images, robust: bool):
        rec = self.recon
        first = rec.registration_order[0]
        free_images = set(free_images) - {first}
        if not free_images:
            return None
        if robust:
            free_pts = sorted({tid for (im, tid) in rec.observations if im in free_images})
        else:
            free_pts = sorted(rec.points)
        if not free_pts:
            return None
        pt_index = {tid: k for k, tid in enumerate(free_pts)}
        obs = [(im, tid) for (im, tid) in rec.observations if tid in pt_index]
        obs.sort(key=lambda o: (pt_index[o[1]], o[0]))
        images = sorted({im for im, _ in obs} | {first})
        cam_index = {im: k for k, im in enumerate(images)}
        problem = BAProblem(
            [rec.poses[im].rotation for im in images],
            [rec.poses[im].translation for im in images],
            [rec.points[tid].position for tid in free_pts],
            [cam_index[im] for im, _ in obs],
            [pt_index[tid] for _, tid in obs],
            [rec.observations[o] for o in obs],
            cam_fixed=[im not in free_images for im in images],
            pt_fixed=np.zeros(len(free_pts), dtype=bool),
            robustify=robust,
            robust_scale=self.config.robust_scale,
        )
        report = optimize(
            problem, BAOptions(self.config.ba_max_iters, self.config.ba_f_tol, self.config.ba_g_tol)
        )
        for im, k in cam_index.items():
            if im in free_images:
                rec.poses[im] = Pose(problem.rotations[k], problem.translations[k])
        for tid, k in pt_index.items():
            rec.points[tid].position = problem.points[k].copy()
        return report

    def local_neighborhood(self, image):
        rec = self.recon
        mine = {tid for (im, tid) in rec.observations if im == image}
        shared: dict[str, int] = {}
        for im, tid in rec.observations:
            if im != image and tid in mine:
                shared[im] = shared.get(im, 0) + 1
        return {image} | {im for im, n in shared.items() if n >= self.config.local_ba_min_shared}

    def restore_scale(self):
        rec = self.recon
        a, b = rec.registration_order[:2]
        base = np.linalg.norm(rec.poses[b].center - rec.poses[a].center)
        if not base > 0 or base == 1.0:
            return
        s = 1.0 / base
        for im, p in rec.poses.items():
            if im != a:
                rec.poses[im] = Pose(p.rotation, p.translation * s)
        for pt in rec.points.values():
            pt.position = pt.position * s

    def global_round(self):
        t0 = time.perf_counter()
        report = self.bundle_adjust(self.recon.poses, robust=False)
        self.restore_scale()
        removed = self.filter_points(full=True)
        retri = self.triangulate_new()
        self._check("global bundle adjustment")
        self._time("global_ba", t0)
        log.info(
            "global BA: %s, filtered %d points, retriangulated %d",
            report.termination if report else "skipped",
            removed,
            retri,
        )
        return report

    def _time(self, stage, t0):
        self.recon.timings[stage] = self.recon.timings.get(stage, 0.0) + time.perf_counter() - t0

    # -- main loop ---------------------------------------------------------

    def initialize(self, pair_geometries) -> bool:
        rec = self.recon
        for a, b in _ranked_init_pairs(pair_geometries, self.config.init_min_angle_deg):
            g = pair_geometries[(a, b)]
            rec.poses = {a: Pose.identity(), b: Pose(g.rotation, g.translation)}
            rec.registration_order = [a, b]
            rec.points.clear()
            rec.observations.clear()
            self.excluded.clear()
            made = self.triangulate_new(a)
            if made >= self.config.min_resection_inliers:
                log.info("initialized from %s-%s with %d points", a, b, made)
                return True
            rec.diagnostics.append(f"init pair {a}-{b} gave only {made} points")
        rec.poses.clear()
        rec.registration_order.clear()
        rec.points.clear()
        rec.observations.clear()
        return False

    def next_candidates(self, failed):
        rec = self.recon
        counts = {}
        for im in rec.images:
            if im in rec.poses or im in failed:
                continue
            n = sum(1 for tid in self.image_tracks[im] if tid in rec.points and (im, tid) not in self.excluded)
            if n >= 4:
                counts[im] = n
        return sorted(counts, key=lambda im: (-counts[im], im))

    def try_register(self, image) -> bool:
        rec = self.recon
        tids = [tid for tid in self.image_tracks[image] if tid in rec.points and (image, tid) not in self.excluded]
        f = np.array([self.track_bearings[tid][image] for tid in tids])
        X = np.array([rec.points[tid].position for tid in tids])
        seed = self.rng.spawn(1)[0]
        try:
            res = resect(
                f,
                X,
                threshold=self.config.resection_threshold,
                min_inliers=self.config.min_resection_inliers,
                max_iters=self.config.ransac_max_iters,
                confidence=self.config.ransac_confidence,
                seed=seed,
            )
        except (RegistrationError, InsufficientDataError) as exc:
            rec.diagnostics.append(f"{image}: {exc}")
            return False
        rec.poses[image] = res.pose
        rec.registration_order.append(image)
        for tid, ok in zip(tids, res.inlier_mask):
            if not ok:
                self.excluded.add((image, tid))
        return True

    def run(self, pair_geometries) -> Reconstruction:
        rec = self.recon
        t0 = time.perf_counter()
        if not self.initialize(pair_geometries):
            raise InitializationError("no image pair yields enough triangulated points")
        self._time("initialize", t0)
        self.bundle_adjust(rec.registration_order[1:], robust=False)
        self.restore_scale()
        self.filter_points(full=True)
        self._check("initialization")

        since_global = 0
        failed: set[str] = set()
        while True:
            registered = None
            t0 = time.perf_counter()
            for image in self.next_candidates(failed):
                if self.try_register(image):
                    registered = image
                    break
                failed.add(image)
            self._time("register", t0)
            if registered is None:
                break
            failed.clear()
            t0 = time.perf_counter()
            self.extend_points(registered)
            made = self.triangulate_new(registered)
            self._time("triangulate", t0)
            self._check("registration")

            t0 = time.perf_counter()
            hood = self.local_neighborhood(registered)
            self.bundle_adjust(hood, robust=True)
            touched = {tid for (im, tid) in rec.observations if im in hood}
            removed = self.filter_points(touched)
            self._time("local_ba", t0)
            self._check("local bundle adjustment")
            log.info(
                "registered %s (%d/%d), +%d points, local BA over %d images, filtered %d",
                registered,
                len(rec.poses),
                len(rec.images),
                made,
                len(hood),
                removed,
            )
            since_global += 1
            if since_global >= self.config.global_ba_every:
                self.global_round()
                since_global = 0
        self.global_round()
        for im in rec.unregistered:
            rec.diagnostics.append(f"{im}: not registered")
        return rec


def reconstruct(
    images: dict[str, ErpDims],
    pair_geometries: dict[tuple[str, str], TwoViewGeometry],
    tracks: list[Track],
    config: Config | None = None,
) -> Reconstruction:
    """Incremental reconstruction from verified pairs and tracks.

    Only the largest connected component of the verified pair graph is used
    to seed the reconstruction. If no pair can seed it, the returned
    reconstruction is empty and ``diagnostics`` says why.
    """
    config = config or Config()
    mapper = IncrementalMapper(images, tracks, config)
    component = largest_component(sorted(images), pair_geometries)
    seeds = {k: g for k, g in pair_geometries.items() if k[0] in component and k[1] in component}
    if not seeds:
        mapper.recon.diagnostics.append("cannot initialize: no verified image pairs")
        return mapper.recon
    try:
        return mapper.run(seeds)
    except InitializationError as exc:
        rec = Reconstruction(images=sorted(images), diagnostics=mapper.recon.diagnostics + [f"cannot initialize: {exc}"])
        return rec


def largest_component(images, pair_geometries) -> set[str]:
    parent = {im: im for im in images}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pair_geometries:
        if a in parent and b in parent:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    comps: dict[str, set[str]] = {}
    for im in images:
        comps.setdefault(find(im), set()).add(im)
    connected = [c for c in comps.values() if any(k[0] in c for k in pair_geometries)]
    if not connected:
        return set()
    return min(connected, key=lambda c: (-len(c), min(c)))
