"""Discrimination metrics with percentile bootstrap intervals."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import UnstableBootstrapError
from .rng import bootstrap_indices
from .stats import percentile

MIN_VALID_REPLICATES = 50


@dataclass(frozen=True)
class EvalConfig:
    n_bootstrap: int = 2000
    ci_level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.n_bootstrap < 1:
            raise ValueError("n_bootstrap must be at least 1")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")


@dataclass(frozen=True)
class MetricReport:
    metric: str
    point: float | None
    ci_low: float | None
    ci_high: float | None
    n_cases: int
    n_positive: int
    n_valid_replicates: int = 0
    n_skipped_replicates: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def _arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(int).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def auc(scores, labels) -> float | None:
    """Mann-Whitney AUC with midranks; ``None`` unless both classes occur."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float | None:
    """Step-wise AP; ties in score keep input order."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, y.size + 1)
    # exact rational sum, rounded once, so dyadic results come out bit-exact
    total = sum(map(Fraction, tp[hits == 1].tolist(), ranks[hits == 1].tolist()), Fraction(0))
    return float(total / n_pos)


METRICS: dict[str, Callable] = {"auc": auc, "ap": average_precision}


def _metric_name(fn) -> str:
    for k, v in METRICS.items():
        if v is fn:
            return k
    return getattr(fn, "__name__", "metric")


def _interval(values, level):
    lo, hi = percentile(values, [100.0 * (1.0 - level) / 2.0, 100.0 * (1.0 + level) / 2.0])
    return float(lo), float(hi)


def _run_replicates(one: Callable[[int], float | None], n: int, parallelism: int) -> np.ndarray:
    """Evaluate replicate ``r`` into slot ``r``; NaN marks an undefined metric."""
    out = np.full(n, np.nan)

    def work(rs):
        for r in rs:
            v = one(r)
            if v is not None:
                out[r] = v

    if parallelism <= 1:
        work(range(n))
    else:
        chunks = [range(i, n, parallelism) for i in range(parallelism)]
        with ThreadPoolExecutor(parallelism) as ex:
            list(ex.map(work, chunks))
    return out


def _summarise(name, point, reps, config, n_cases, n_pos) -> MetricReport:
    valid = reps[~np.isnan(reps)]
    if valid.size < min(MIN_VALID_REPLICATES, config.n_bootstrap):
        raise UnstableBootstrapError(int(valid.size))
    lo, hi = _interval(valid, config.ci_level)
    return MetricReport(name, point, lo, hi, n_cases, n_pos, int(valid.size),
                        int(reps.size - valid.size))


def bootstrap_ci(metric_fn, scores, labels, config: EvalConfig = EvalConfig(),
                 parallelism: int = 1, stream: int = 0) -> MetricReport:
    """Point estimate on the full sample plus a percentile bootstrap interval.

    Replicate ``r`` resamples with the substream ``(seed, stream, r)``;
    replicates that draw a single class are skipped.
    """
    s, y = _arrays(scores, labels)
    point = metric_fn(s, y)
    if point is None:
        raise ValueError("metric undefined on the full sample")

    def one(r):
        idx = bootstrap_indices(config.seed, stream, r, s.size)
        return metric_fn(s[idx], y[idx])

    reps = _run_replicates(one, config.n_bootstrap, parallelism)
    return _summarise(_metric_name(metric_fn), point, reps, config, s.size, int(y.sum()))


def paired_delta(scores_a, scores_b, labels, metric_fn, config: EvalConfig = EvalConfig(),
                 parallelism: int = 1, stream: int = 0) -> MetricReport:
    """Difference ``m(a) - m(b)`` with both models resampled jointly."""
    a, y = _arrays(scores_a, labels)
    b, _ = _arrays(scores_b, labels)
    ma, mb = metric_fn(a, y), metric_fn(b, y)
    if ma is None or mb is None:
        raise ValueError("metric undefined on the full sample")

    def one(r):
        idx = bootstrap_indices(config.seed, stream, r, y.size)
        va, vb = metric_fn(a[idx], y[idx]), metric_fn(b[idx], y[idx])
        return None if va is None or vb is None else va - vb

    reps = _run_replicates(one, config.n_bootstrap, parallelism)
    return _summarise("delta_" + _metric_name(metric_fn), ma - mb, reps, config,
                      y.size, int(y.sum()))


def macro_average(findings: Sequence, metric_fn=None, config: EvalConfig = EvalConfig(),
                  parallelism: int = 1) -> MetricReport:
    """Unweighted mean of a metric over findings.

    ``findings`` holds either ``MetricReport`` objects (point estimate only,
    no interval) or ``(scores, labels)`` pairs. For raw pairs, replicate
    ``r`` resamples finding ``f`` with substream ``(seed, f, r)`` and averages
    the findings whose metric is defined in that replicate.
    """
    items = list(findings)
    if items and all(isinstance(f, MetricReport) for f in items):
        pts = [f.point for f in items if f.point is not None]
        if not pts:
            raise ValueError("no finding has a defined metric")
        name = "macro_" + items[0].metric
        return MetricReport(name, float(np.mean(pts)), None, None,
                            sum(f.n_cases for f in items), sum(f.n_positive for f in items))
    if metric_fn is None:
        raise ValueError("metric_fn is required for raw (scores, labels) input")
    data = [_arrays(s, y) for s, y in items]
    points = [metric_fn(s, y) for s, y in data]
    defined = [p for p in points if p is not None]
    if not defined:
        raise ValueError("no finding has a defined metric")

    def one(r):
        vals = []
        for f, (s, y) in enumerate(data):
            if points[f] is None:
                continue
            idx = bootstrap_indices(config.seed, f, r, s.size)
            v = metric_fn(s[idx], y[idx])
            if v is not None:
                vals.append(v)
        return math.fsum(vals) / len(vals) if vals else None

    reps = _run_replicates(one, config.n_bootstrap, parallelism)
    return _summarise("macro_" + _metric_name(metric_fn), math.fsum(defined) / len(defined),
                      reps, config, sum(s.size for s, _ in data),
                      sum(int(y.sum()) for _, y in data))
