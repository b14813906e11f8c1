"""Pipeline configuration loaded from ``key = value`` text."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ParseError


@dataclass(frozen=True)
class Config:
    # match graph
    grid: float = 4.0
    # two-view verification
    ransac_threshold: float = 0.01
    ransac_max_iters: int = 10_000
    ransac_confidence: float = 0.9999
    min_two_view_inliers: int = 15
    # initialization and registration
    init_min_angle_deg: float = 2.0
    resection_threshold: float = 0.02
    min_resection_inliers: int = 12
    # triangulation and filtering
    tri_min_angle_deg: float = 1.5
    max_reproj_error: float = 0.02
    # bundle adjustment
    local_ba_min_shared: int = 20
    global_ba_every: int = 5
    robust_scale: float = 0.02
    ba_max_iters: int = 100
    ba_f_tol: float = 1e-10
    ba_g_tol: float = 1e-10
    # misc
    seed: int = 0
    threads: int = 1
    audit: bool = False

    def __post_init__(self):
        checks = {
            "grid": self.grid > 0,
            "ransac_threshold": 0 < self.ransac_threshold < math.pi / 2,
            "ransac_max_iters": self.ransac_max_iters >= 1,
            "ransac_confidence": 0 < self.ransac_confidence < 1,
            "min_two_view_inliers": self.min_two_view_inliers >= 8,
            "init_min_angle_deg": 0 <= self.init_min_angle_deg < 180,
            "resection_threshold": 0 < self.resection_threshold < math.pi / 2,
            "min_resection_inliers": self.min_resection_inliers >= 4,
            "tri_min_angle_deg": 0 <= self.tri_min_angle_deg < 180,
            "max_reproj_error": 0 < self.max_reproj_error < math.pi,
            "local_ba_min_shared": self.local_ba_min_shared >= 0,
            "global_ba_every": self.global_ba_every >= 1,
            "robust_scale": self.robust_scale > 0,
            "ba_max_iters": self.ba_max_iters >= 0,
            "ba_f_tol": self.ba_f_tol >= 0,
            "ba_g_tol": self.ba_g_tol >= 0,
            "seed": 0 <= self.seed < 2**63,
            "threads": self.threads >= 1,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"config value out of range: {', '.join(f'{k}={getattr(self, k)!r}' for k in bad)}")

    def with_overrides(self, **kw) -> "Config":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v)


def _convert(name, typ, raw, lineno, path):
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ParseError(f"bad value {raw!r} for {name}", lineno, path) from None


def parse_config(text: str, path=None) -> Config:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Raises:
        ParseError: unknown key, duplicate key, malformed line or value out of range.
    """
    types = {f.name: f.type for f in fields(Config)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno, path)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ParseError(f"unknown config key {key!r}", lineno, path)
        if key in values:
            raise ParseError(f"duplicate config key {key!r}", lineno, path)
        values[key] = _convert(key, types[key], raw, lineno, path)
    try:
        return Config(**values)
    except ValueError as exc:
        raise ParseError(str(exc), None, path) from None


def load_config(path) -> Config:
    path = Path(path)
    return parse_config(path.read_text(), path)
