"""First-order HU statistics, attenuation contrasts, high-HU burden and
compartment occupancy."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .stats import percentile

ENTROPY_BIN_HU = 25.0
ENTROPY_RANGE = (-1000.0, 3000.0)
DEFAULT_THRESHOLDS = (130.0, 200.0, 300.0)

_PERCENTILES = (5.0, 10.0, 25.0, 50.0, 75.0, 90.0, 95.0)


@dataclass(frozen=True)
class HUStats:
    n: int
    mean: float
    std: float
    min: float
    max: float
    median: float
    p5: float
    p10: float
    p25: float
    p75: float
    p90: float
    p95: float
    iqr: float
    skewness: float
    excess_kurtosis: float
    entropy: float

    def as_dict(self) -> dict:
        return asdict(self)


STAT_NAMES = tuple(f for f in HUStats.__dataclass_fields__ if f != "n")


@dataclass(frozen=True)
class BurdenResult:
    threshold_hu: float
    burden_volume_mm3: float
    burden_fraction: float


@dataclass(frozen=True)
class OccupancyResult:
    content_volume_mm3: float
    compartment_volume_mm3: float
    occupancy: float


def hu_entropy(values) -> float:
    """Shannon entropy (bits) over fixed 25 HU bins on [-1000, 3000]."""
    lo, hi = ENTROPY_RANGE
    nbins = int(round((hi - lo) / ENTROPY_BIN_HU))
    v = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    idx = np.minimum(np.floor((v - lo) / ENTROPY_BIN_HU).astype(np.intp), nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    p = counts[counts > 0] / v.size
    return float(-(p * np.log2(p)).sum())


def firstorder_from_values(values) -> HUStats | None:
    x = np.asarray(values, dtype=np.float64).ravel()
    n = x.size
    if n == 0:
        return None
    mean = float(x.mean())
    d = x - mean
    m2 = float(np.mean(d * d))
    std = math.sqrt(m2)
    if std > 0.0:
        skew = float(np.mean(d ** 3)) / m2 ** 1.5
        kurt = float(np.mean(d ** 4)) / (m2 * m2) - 3.0
    else:
        skew = kurt = 0.0
    p5, p10, p25, p50, p75, p90, p95 = percentile(x, _PERCENTILES)
    return HUStats(
        n=int(n), mean=mean, std=std, min=float(x.min()), max=float(x.max()),
        median=float(p50), p5=float(p5), p10=float(p10), p25=float(p25), p75=float(p75),
        p90=float(p90), p95=float(p95), iqr=float(p75 - p25),
        skewness=skew, excess_kurtosis=kurt, entropy=hu_entropy(x),
    )


def _values_in(volume, coords):
    vals = volume.values if hasattr(volume, "values") else np.asarray(volume)
    c = np.asarray(coords)
    if c.ndim == 3:  # boolean mask
        return vals[c.astype(bool)]
    c = c.reshape(-1, 3)
    return vals[c[:, 0], c[:, 1], c[:, 2]]


def firstorder_stats(volume, coords) -> HUStats | None:
    """HU summaries over the voxels of a mask (coordinates or boolean grid)."""
    return firstorder_from_values(_values_in(volume, coords))


def cross_organ_contrast(stats_a: HUStats | None, stats_b: HUStats | None,
                         which_stat: str = "mean") -> float | None:
    if stats_a is None or stats_b is None:
        return None
    return float(getattr(stats_a, which_stat) - getattr(stats_b, which_stat))


def burden_from_values(values, threshold_hu, voxel_volume_mm3) -> BurdenResult | None:
    v = np.asarray(values)
    if v.size == 0:
        return None
    hits = int(np.count_nonzero(v >= threshold_hu))
    return BurdenResult(float(threshold_hu), hits * voxel_volume_mm3, hits / v.size)


def high_hu_burden(volume, coords, threshold_hu, spacing) -> BurdenResult | None:
    sx, sy, sz = spacing
    return burden_from_values(_values_in(volume, coords), threshold_hu, sx * sy * sz)


def occupancy_from_counts(n_content, n_compartment, voxel_volume_mm3) -> OccupancyResult | None:
    """``n_compartment`` counts compartment-class voxels only; content is added."""
    union = n_content + n_compartment
    if union == 0:
        return None
    return OccupancyResult(n_content * voxel_volume_mm3, union * voxel_volume_mm3,
                           n_content / union)


def occupancy(labelmap, content_class: int, compartment_class: int, spacing) -> OccupancyResult | None:
    labels = labelmap.labels if hasattr(labelmap, "labels") else np.asarray(labelmap)
    sx, sy, sz = spacing
    return occupancy_from_counts(int(np.count_nonzero(labels == content_class)),
                                 int(np.count_nonzero(labels == compartment_class)),
                                 sx * sy * sz)


def composite_ratio(a, b) -> float | None:
    if a is None or b is None or b == 0:
        return None
    if not (math.isfinite(a) and math.isfinite(b)):
        return None
    return a / b
