"""Phenotype-stratified audits and ceteris-paribus response curves."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, UnstableBootstrapError
from .features import FeatureTable
from .metrics import EvalConfig, MetricReport, auc, bootstrap_ci
from .selection import FrozenSpec, apply_frozen
from .stats import median


@dataclass(frozen=True)
class StratumSpec:
    """Which positives survive a threshold on a stratifying descriptor.

    ``direction="ge"`` keeps positives with value >= threshold, ``"lt"``
    keeps those below it. Negatives are always kept. Positives with no
    stratum value are excluded unless ``missing_as`` supplies one.
    """

    descriptor: str
    direction: str = "ge"
    missing_as: float | None = None

    def __post_init__(self):
        if self.direction not in ("ge", "lt"):
            raise ValueError("direction must be 'ge' or 'lt'")


@dataclass(frozen=True)
class StratumResult:
    threshold: float
    report: MetricReport | None
    n_negative: int
    n_positive_kept: int
    n_positive_excluded: int
    n_positive_missing_stratum: int
    excluded_fraction: float

    def as_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "report": None if self.report is None else self.report.as_dict(),
            "n_negative": self.n_negative,
            "n_positive_kept": self.n_positive_kept,
            "n_positive_excluded": self.n_positive_excluded,
            "n_positive_missing_stratum": self.n_positive_missing_stratum,
            "excluded_fraction": self.excluded_fraction,
        }


def stratified_eval(scores, labels, stratum_values, thresholds: Sequence[float],
                    spec: StratumSpec = StratumSpec(""), metric_fn=auc,
                    config: EvalConfig = EvalConfig(), parallelism: int = 1) -> list[StratumResult]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    v = np.array([np.nan if x is None else x for x in stratum_values], dtype=np.float64)
    if not (s.shape == y.shape == v.shape):
        raise ValueError("scores, labels and stratum values differ in length")
    pos = y == 1
    absent = pos & np.isnan(v)
    if spec.missing_as is not None:
        v = np.where(np.isnan(v), spec.missing_as, v)
        absent = np.zeros_like(absent)
    n_pos = int(pos.sum())
    out = []
    for t in thresholds:
        with np.errstate(invalid="ignore"):
            passes = v >= t if spec.direction == "ge" else v < t
        keep = ~pos | (passes & ~np.isnan(v))
        kept_pos = int((keep & pos).sum())
        report = None
        if kept_pos > 0 and (~pos).any():
            try:
                report = bootstrap_ci(metric_fn, s[keep], y[keep], config, parallelism)
            except UnstableBootstrapError:
                report = MetricReport("auc" if metric_fn is auc else "metric",
                                      metric_fn(s[keep], y[keep]), None, None,
                                      int(keep.sum()), kept_pos)
        out.append(StratumResult(
            threshold=float(t), report=report, n_negative=int((~pos).sum()),
            n_positive_kept=kept_pos, n_positive_excluded=n_pos - kept_pos,
            n_positive_missing_stratum=int(absent.sum()),
            excluded_fraction=(n_pos - kept_pos) / n_pos if n_pos else math.nan,
        ))
    return out


def reference_medians(spec: FrozenSpec, reference: FeatureTable) -> dict[str, float]:
    """Median of observed reference values per selected descriptor."""
    med = {}
    for d in spec.descriptors:
        if d in reference.catalog:
            col = reference.column(d)
            obs = col[~np.isnan(col)]
            med[d] = median(obs) if obs.size else spec.impute[d]
        else:
            med[d] = spec.impute[d]
    return med


def ceteris_paribus(spec: FrozenSpec, reference: FeatureTable, descriptor_id: str,
                    grid_size: int = 50) -> list[tuple[float, float]]:
    """Sweep one descriptor over its observed range, others at their medians."""
    if descriptor_id not in spec.descriptors:
        raise DataError(f"descriptor {descriptor_id!r} is not part of the spec")
    if reference.shape[0] == 0:
        raise DataError("empty reference table")
    if descriptor_id not in reference.catalog:
        raise DataError(f"descriptor {descriptor_id!r} is absent from the reference table")
    col = reference.column(descriptor_id)
    obs = col[~np.isnan(col)]
    if obs.size == 0:
        raise DataError(f"descriptor {descriptor_id!r} is never observed in the reference table")
    base = reference_medians(spec, reference)
    grid = np.linspace(obs.min(), obs.max(), int(grid_size))
    points = []
    for x in grid:
        case = dict(base)
        case[descriptor_id] = float(x)
        points.append((float(x), apply_frozen(spec, case)))
    return points
