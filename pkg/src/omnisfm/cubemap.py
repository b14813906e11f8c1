"""Equirectangular <-> cubemap resampling.

Each face is a 90 degree pinhole view. A face's ``virtual_pose`` rotates
panorama-frame directions into the face camera frame, whose optical axis is
+z, +x is image right and +y is image up (rows grow downward).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError
from .geometry import ErpDims, Pose, bearing_to_pixel, pixel_to_bearing

_R_Y = lambda a: np.array(  # noqa: E731
    [[np.cos(a), 0.0, np.sin(a)], [0.0, 1.0, 0.0], [-np.sin(a), 0.0, np.cos(a)]]
)
_R_X = lambda a: np.array(  # noqa: E731
    [[1.0, 0.0, 0.0], [0.0, np.cos(a), -np.sin(a)], [0.0, np.sin(a), np.cos(a)]]
)


def _exact(R):
    return np.round(R).astype(np.float64)


FACE_ROTATIONS = {
    "front": np.eye(3),
    "right": _exact(_R_Y(-np.pi / 2)),
    "back": _exact(_R_Y(np.pi)),
    "left": _exact(_R_Y(np.pi / 2)),
    "up": _exact(_R_X(np.pi / 2)),
    "down": _exact(_R_X(-np.pi / 2)),
}
FACE_IDS = tuple(FACE_ROTATIONS)


@dataclass(frozen=True, eq=False)
class CubemapFace:
    face_id: str
    image: np.ndarray
    virtual_pose: Pose


def face_rays(face_size: int) -> np.ndarray:
    """Face-frame ray directions through every pixel center, shape (S, S, 3)."""
    g = 2.0 * (np.arange(face_size) + 0.5) / face_size - 1.0
    x, y = np.meshgrid(g, -g)
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def _as_float_image(image):
    img = np.asarray(image)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    if img.ndim != 3:
        raise DomainError(f"expected an (H, W) or (H, W, C) raster, got shape {img.shape}")
    return np.ascontiguousarray(img, dtype=np.float64), squeeze


def _restore_dtype(out, dtype, squeeze):
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        out = np.clip(np.rint(out), info.min, info.max).astype(dtype)
    else:
        out = out.astype(dtype, copy=False)
    return out[:, :, 0] if squeeze else out


def erp_to_cubemap(image, face_size: int) -> list[CubemapFace]:
    """Render six 90 degree faces from an ERP raster.

    Raises:
        DomainError: the raster is not 2:1 or ``face_size < 2``.
    """
    img, squeeze = _as_float_image(image)
    H, W = img.shape[:2]
    if face_size < 2:
        raise DomainError("face_size must be >= 2")
    try:
        dims = ErpDims(W, H)
    except DomainError as exc:
        raise DomainError(f"malformed ERP raster: {exc}") from None
    rays = face_rays(face_size).reshape(-1, 3)
    faces = []
    for fid, R in FACE_ROTATIONS.items():
        world = rays @ R  # R^T applied to row vectors
        world /= np.linalg.norm(world, axis=1, keepdims=True)
        px = bearing_to_pixel(world, dims)
        vals = kernels.sample_bilinear_wrap(img, px[:, 0], px[:, 1])
        face = vals.reshape(face_size, face_size, -1)
        faces.append(CubemapFace(fid, _restore_dtype(face, np.asarray(image).dtype, squeeze), Pose(R, np.zeros(3))))
    return faces


def bearing_to_face(u: np.ndarray):
    """Assign bearings to faces and return face index and face pixel coordinates.

    Returns:
        (face (N,) int index into ``FACE_IDS``, cols (N,), rows (N,)) where the
        coordinates are continuous in units of ``face_size`` = 1.
    """
    u = np.asarray(u, dtype=np.float64)
    best = np.full(len(u), -1)
    best_z = np.full(len(u), -np.inf)
    local = np.empty_like(u)
    for k, R in enumerate(FACE_ROTATIONS.values()):
        v = u @ R.T
        better = v[:, 2] > best_z
        best[better] = k
        best_z[better] = v[better, 2]
        local[better] = v[better]
    x = local[:, 0] / local[:, 2]
    y = local[:, 1] / local[:, 2]
    return best, 0.5 * (x + 1.0), 0.5 * (1.0 - y)


def cubemap_to_erp(faces: list[CubemapFace], width: int) -> np.ndarray:
    """Resample six faces (ordered as :data:`FACE_IDS`) back into an ERP raster."""
    dims = ErpDims(width, width // 2)
    ordered = {f.face_id: f for f in faces}
    if set(ordered) != set(FACE_IDS):
        raise DomainError("need exactly the six cube faces")
    dtype = np.asarray(faces[0].image).dtype
    stack = []
    for fid in FACE_IDS:
        img, squeeze = _as_float_image(ordered[fid].image)
        stack.append(img)
    S = stack[0].shape[0]
    c, r = np.meshgrid(np.arange(dims.width) + 0.5, np.arange(dims.height) + 0.5)
    u = pixel_to_bearing(np.stack([c.ravel(), r.ravel()], axis=1), dims)
    face, fc, fr = bearing_to_face(u)
    out = np.empty((len(u), stack[0].shape[2]))
    for k in range(6):
        m = face == k
        out[m] = _sample_clamped(stack[k], fc[m] * S, fr[m] * S)
    out = out.reshape(dims.height, dims.width, -1)
    return _restore_dtype(out, dtype, squeeze)


def _sample_clamped(img, cols, rows):
    H, W = img.shape[:2]
    x = np.clip(cols - 0.5, 0.0, W - 1.0)
    y = np.clip(rows - 0.5, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(x), W - 2).astype(np.int64)
    y0 = np.minimum(np.floor(y), H - 2).astype(np.int64)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bot = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy
