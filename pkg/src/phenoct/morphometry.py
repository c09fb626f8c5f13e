"""Size and shape kernels for a single organ mask.

Kernels take voxel coordinates as an ``(n, 3)`` integer array (the form the
descriptor runner produces from its single label scan) together with the
per-axis spacing in mm. ``coords_from_mask`` converts a boolean grid.
An empty mask yields ``None`` (a missing descriptor), never an exception.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .stats import percentile

MAX_BOUNDARY_POINTS = 20_000
_BRUTE_FORCE_LIMIT = 256

@dataclass(frozen=True)
class MorphometryResult:
    volume_mm3: float
    max_diameter_mm: float
    surface_area_mm2: float
    sphericity: float | None
    elongation: float
    flatness: float
    body_ratio: float | None = None
    slice_diameter_p90_mm: float | None = None


def coords_from_mask(mask) -> np.ndarray:
    return np.argwhere(np.asarray(mask, dtype=bool))


def _as_coords(coords) -> np.ndarray:
    c = np.asarray(coords)
    if c.ndim == 3:
        return coords_from_mask(c)
    return c.reshape(-1, 3).astype(np.int64, copy=False)


def _box(coords):
    """Dense boolean box around the mask with one voxel of padding."""
    origin = coords.min(axis=0) - 1
    local = coords - origin
    box = np.zeros(tuple(local.max(axis=0) + 2), dtype=bool)
    box[local[:, 0], local[:, 1], local[:, 2]] = True
    return box, origin


def _faces(coords):
    """Exposed-face counts per direction (+x, -x, +y, -y, +z, -z) and the
    boundary voxels in index order.

    Works in a padded box around the mask, so grid borders count as exposed
    without knowing the full grid.
    """
    box, origin = _box(coords)
    counts = np.empty(6, dtype=np.int64)
    boundary = np.zeros_like(box)
    for axis in range(3):
        inner = [slice(None)] * 3
        outer = [slice(None)] * 3
        for f, (src, dst) in enumerate(((slice(None, -1), slice(1, None)),
                                        (slice(1, None), slice(None, -1)))):
            inner[axis], outer[axis] = src, dst
            # voxel present, neighbour one step along +/- axis absent
            hit = box[tuple(inner)] & ~box[tuple(outer)]
            counts[2 * axis + f] = np.count_nonzero(hit)
            boundary[tuple(inner)] |= hit
    return counts, np.argwhere(boundary) + origin


def mask_volume(coords, spacing) -> float | None:
    c = _as_coords(coords)
    if c.shape[0] == 0:
        return None
    sx, sy, sz = spacing
    return c.shape[0] * (sx * sy * sz)


def surface_area(coords, spacing) -> float | None:
    """Exposed-face area; faces on the grid border count as exposed."""
    c = _as_coords(coords)
    if c.shape[0] == 0:
        return None
    return _area_from_counts(_faces(c)[0], spacing)


def _area_from_counts(counts, spacing):
    sx, sy, sz = spacing
    face_area = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    return float(np.dot(counts, face_area))


def boundary_voxels(coords) -> np.ndarray:
    """Mask voxels with at least one 6-neighbour outside the mask, index order."""
    c = _as_coords(coords)
    if c.shape[0] == 0:
        return c
    return _faces(c)[1]


def _max_pairwise(points: np.ndarray) -> float:
    n = points.shape[0]
    best = 0.0
    for start in range(0, n, 512):
        blk = points[start:start + 512]
        dx = blk[:, None, 0] - points[None, :, 0]
        dy = blk[:, None, 1] - points[None, :, 1]
        dz = blk[:, None, 2] - points[None, :, 2]
        d2 = dx * dx + dy * dy + dz * dz
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def max_diameter(coords, spacing) -> float | None:
    """Largest centre-to-centre distance between boundary voxels (mm).

    Above ``MAX_BOUNDARY_POINTS`` boundary voxels every k-th one in index
    order is kept, which makes the result a lower bound.
    """
    b = boundary_voxels(coords)
    if b.shape[0] == 0:
        return None
    return _diameter_from_boundary(b, spacing)


def _diameter_from_boundary(b, spacing):
    if b.shape[0] > MAX_BOUNDARY_POINTS:
        k = math.ceil(b.shape[0] / MAX_BOUNDARY_POINTS)
        b = b[::k]
    pts = b.astype(np.float64) * np.asarray(spacing, dtype=np.float64)
    if pts.shape[0] > _BRUTE_FORCE_LIMIT:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass  # flat point sets: fall back to all points
    return _max_pairwise(pts)


def sphericity(volume_mm3, surface_area_mm2) -> float | None:
    if volume_mm3 is None or surface_area_mm2 is None:
        return None
    if volume_mm3 <= 0 or surface_area_mm2 <= 0:
        return None
    return math.pi ** (1.0 / 3.0) * (6.0 * volume_mm3) ** (2.0 / 3.0) / surface_area_mm2


def principal_axes(coords, spacing) -> tuple[float, float] | None:
    """(elongation, flatness) from the covariance of physical voxel centres."""
    c = _as_coords(coords)
    if c.shape[0] == 0:
        return None
    pts = c.astype(np.float64) * np.asarray(spacing, dtype=np.float64)
    centred = pts - pts.mean(axis=0)
    cov = centred.T @ centred / pts.shape[0]
    lam = np.clip(np.linalg.eigvalsh(cov)[::-1], 0.0, None)
    if lam[0] <= 0.0:
        return 0.0, 0.0
    return float(math.sqrt(lam[1] / lam[0])), float(math.sqrt(lam[2] / lam[0]))


def body_ratio(organ_volume_mm3, body_volume_mm3) -> float | None:
    if organ_volume_mm3 is None or body_volume_mm3 is None:
        return None
    if organ_volume_mm3 <= 0 or body_volume_mm3 <= 0:
        return None
    return organ_volume_mm3 / body_volume_mm3


AXES = {"x": 0, "y": 1, "z": 2}


def slice_diameters(coords, spacing, axis) -> np.ndarray:
    """Equivalent circular diameter of every nonempty slice across ``axis``."""
    c = _as_coords(coords)
    ax = AXES[axis] if isinstance(axis, str) else int(axis)
    if c.shape[0] == 0:
        return np.empty(0)
    counts = np.bincount(c[:, ax] - c[:, ax].min())
    counts = counts[counts > 0]
    in_plane = [s for i, s in enumerate(spacing) if i != ax]
    areas = counts * (in_plane[0] * in_plane[1])
    return 2.0 * np.sqrt(areas / math.pi)


def slice_diameter_percentile(coords, spacing, axis, p=90.0) -> float | None:
    d = slice_diameters(coords, spacing, axis)
    if d.size == 0:
        return None
    return percentile(d, p)


def morphometry(coords, spacing, body_volume_mm3=None, axis=None) -> MorphometryResult | None:
    """Every morphometry descriptor for one mask, or ``None`` if it is empty."""
    c = _as_coords(coords)
    if c.shape[0] == 0:
        return None
    counts, boundary = _faces(c)
    vol = mask_volume(c, spacing)
    area = _area_from_counts(counts, spacing)
    elong, flat = principal_axes(c, spacing)
    return MorphometryResult(
        volume_mm3=vol,
        max_diameter_mm=_diameter_from_boundary(boundary, spacing),
        surface_area_mm2=area,
        sphericity=sphericity(vol, area),
        elongation=elong,
        flatness=flat,
        body_ratio=body_ratio(vol, body_volume_mm3),
        slice_diameter_p90_mm=(slice_diameter_percentile(c, spacing, axis, 90.0)
                               if axis is not None else None),
    )
