"""Cross-validated descriptor selection, locked refit and the frozen spec.

Per finding: stratified folds, an elastic-net sweep over the (C, l1_ratio)
grid inside each fold, retention counting, a single locked refit at a fixed
operating point on the full training split, and a ``FrozenSpec`` that
carries everything needed to score new cases without touching their cohort.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import elasticnet as en
from .errors import DegenerateLabelsError, DriftError, SpecError, SpecHashError
from .features import FeatureTable, ImputerParams, ScalerParams
from .metrics import average_precision
from .rng import substream

log = logging.getLogger(__name__)

RETAIN_EPS = 1e-10


@dataclass(frozen=True)
class SelectionConfig:
    folds: int = 5
    retention_threshold: float = 0.6
    C_grid: tuple[float, ...] = (0.001, 0.01, 0.1, 1.0)
    l1_grid: tuple[float, ...] = (0.1, 0.5, 0.9)
    final_C: float = 0.1
    final_l1_ratio: float = 0.5
    fold_seed: int = 0
    correlation_threshold: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.retention_threshold <= 1.0:
            raise ValueError("retention_threshold must lie in (0, 1]")
        if not self.C_grid or not self.l1_grid:
            raise ValueError("selection grids must be nonempty")
        object.__setattr__(self, "C_grid", tuple(sorted(float(c) for c in self.C_grid)))
        object.__setattr__(self, "l1_grid", tuple(sorted(float(a) for a in self.l1_grid)))

    @property
    def min_folds(self) -> int:
        # round() guards against 0.6 * 5 landing a hair above 3
        return math.ceil(round(self.retention_threshold * self.folds, 9))


def stratified_folds(labels, k: int = 5, seed: int = 0, case_ids=None) -> np.ndarray:
    """Fold index per case.

    Within each class (positives first) cases are ordered by id, shuffled
    with a seeded stream and dealt round-robin; the dealing position carries
    over from one class to the next so total fold sizes stay within one.
    """
    if k < 2:
        raise ValueError("need at least 2 folds")
    y = np.asarray(labels).astype(int)
    ids = [str(i) for i in (case_ids if case_ids is not None else range(y.size))]
    if int(y.sum()) < k:
        warnings.warn(f"only {int(y.sum())} positives for {k} folds; some folds lack positives",
                      RuntimeWarning, stacklevel=2)
    folds = np.empty(y.size, dtype=np.intp)
    nxt = 0
    for stream, cls in ((1, 1), (0, 0)):
        members = sorted(np.flatnonzero(y == cls), key=lambda i: (ids[i], i))
        perm = substream(seed, stream).permutation(len(members))
        for pos in perm:
            folds[members[pos]] = nxt % k
            nxt += 1
    return folds


@dataclass
class SelectionReport:
    descriptor_ids: list[str]
    folds: int
    min_folds: int
    C_grid: list[float]
    l1_grid: list[float]
    fold_assignment: list[int]
    val_ap: list[list[list[float | None]]]  # [fold][C][l1]
    best_point: list[tuple[float, float]]
    retention: dict[str, int]
    retention_at_final_point: dict[str, int]
    selected: list[str]
    converged: list[list[list[bool]]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "descriptor_ids": self.descriptor_ids,
            "folds": self.folds,
            "min_folds": self.min_folds,
            "C_grid": self.C_grid,
            "l1_grid": self.l1_grid,
            "fold_assignment": self.fold_assignment,
            "val_ap": self.val_ap,
            "best_point": [list(p) for p in self.best_point],
            "retention": self.retention,
            "retention_at_final_point": self.retention_at_final_point,
            "selected": self.selected,
            "converged": self.converged,
        }


def _fold_fits(X, y, tr, va, config: SelectionConfig):
    s = en.class_weights(y[tr])
    out = {}
    for C in config.C_grid:
        for a in config.l1_grid:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = en.fit(X[tr], y[tr], s, en.ElasticNetConfig(C=C, l1_ratio=a),
                             check_standardized=False)
            ap = average_precision(en.predict_proba(X[va], res.weights, res.intercept), y[va])
            out[(C, a)] = (res, ap)
    return out


def cv_select(table: FeatureTable, labels, config: SelectionConfig = SelectionConfig(),
              parallelism: int = 1) -> tuple[list[str], SelectionReport]:
    """Descriptors retained in at least ``ceil(retention * k)`` folds.

    A descriptor counts as retained in a fold when its coefficient is nonzero
    at the grid point with the best validation AP for that fold (ties go to
    the smaller C, then the smaller l1_ratio).
    """
    X = np.asarray(table.values, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if y.size != X.shape[0]:
        raise ValueError("labels and table rows differ")
    if y.sum() == 0 or y.sum() == y.size:
        raise DegenerateLabelsError()
    en._check_standardized(X)
    k = config.folds
    folds = stratified_folds(y, k, config.fold_seed, table.case_ids)

    def run(f):
        tr, va = np.flatnonzero(folds != f), np.flatnonzero(folds == f)
        return _fold_fits(X, y, tr, va, config)

    if parallelism > 1:
        with ThreadPoolExecutor(parallelism) as ex:
            per_fold = list(ex.map(run, range(k)))
    else:
        per_fold = [run(f) for f in range(k)]

    ids = list(table.descriptor_ids)
    retention = np.zeros(len(ids), dtype=int)
    at_final = np.zeros(len(ids), dtype=int)
    val_ap, best_points, conv = [], [], []
    final_key = (float(config.final_C), float(config.final_l1_ratio))
    for fits in per_fold:
        grid = [[fits[(C, a)][1] for a in config.l1_grid] for C in config.C_grid]
        val_ap.append(grid)
        conv.append([[bool(fits[(C, a)][0].converged) for a in config.l1_grid]
                     for C in config.C_grid])
        # iteration order is C ascending then l1 ascending, so strict ">" keeps ties early
        best, best_ap = None, -math.inf
        for C in config.C_grid:
            for a in config.l1_grid:
                ap = fits[(C, a)][1]
                score = -math.inf if ap is None else ap
                if best is None or score > best_ap:
                    best, best_ap = (C, a), score
        best_points.append(best)
        retention += np.abs(fits[best][0].weights) > RETAIN_EPS
        if final_key in fits:
            at_final += np.abs(fits[final_key][0].weights) > RETAIN_EPS

    selected = [d for d, c in zip(ids, retention) if c >= config.min_folds]
    report = SelectionReport(
        descriptor_ids=ids, folds=k, min_folds=config.min_folds,
        C_grid=list(config.C_grid), l1_grid=list(config.l1_grid),
        fold_assignment=[int(f) for f in folds], val_ap=val_ap, best_point=best_points,
        retention={d: int(c) for d, c in zip(ids, retention)},
        retention_at_final_point={d: int(c) for d, c in zip(ids, at_final)},
        selected=selected, converged=conv,
    )
    return selected, report


# ------------------------------------------------------------- frozen spec

SPEC_KEYS = {"finding", "catalog_sha256", "descriptors", "impute", "scale", "weights",
             "intercept", "config", "converged", "selection_report_path", "spec_sha256"}


@dataclass(frozen=True)
class FrozenSpec:
    finding: str
    catalog_sha256: str
    descriptors: tuple[str, ...]
    impute: Mapping[str, float]
    scale_mean: Mapping[str, float]
    scale_std: Mapping[str, float]
    weights: Mapping[str, float]
    intercept: float
    C: float
    l1_ratio: float
    converged: bool = True
    selection_report_path: str | None = None

    def body(self) -> dict:
        return {
            "finding": self.finding,
            "catalog_sha256": self.catalog_sha256,
            "descriptors": list(self.descriptors),
            "impute": {d: float(self.impute[d]) for d in self.descriptors},
            "scale": {"mean": {d: float(self.scale_mean[d]) for d in self.descriptors},
                      "std": {d: float(self.scale_std[d]) for d in self.descriptors}},
            "weights": {d: float(self.weights[d]) for d in self.descriptors},
            "intercept": float(self.intercept),
            "config": {"C": float(self.C), "l1_ratio": float(self.l1_ratio)},
            "converged": bool(self.converged),
            "selection_report_path": self.selection_report_path,
        }

    @property
    def sha256(self) -> str:
        return _digest(self.body())

    def to_dict(self) -> dict:
        doc = self.body()
        doc["spec_sha256"] = _digest(doc)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FrozenSpec":
        missing = SPEC_KEYS - set(doc)
        if missing:
            raise SpecError(f"spec is missing fields: {sorted(missing)}")
        try:
            ds = tuple(str(d) for d in doc["descriptors"])
            spec = cls(
                finding=str(doc["finding"]),
                catalog_sha256=str(doc["catalog_sha256"]),
                descriptors=ds,
                impute={d: float(doc["impute"][d]) for d in ds},
                scale_mean={d: float(doc["scale"]["mean"][d]) for d in ds},
                scale_std={d: float(doc["scale"]["std"][d]) for d in ds},
                weights={d: float(doc["weights"][d]) for d in ds},
                intercept=float(doc["intercept"]),
                C=float(doc["config"]["C"]),
                l1_ratio=float(doc["config"]["l1_ratio"]),
                converged=bool(doc["converged"]),
                selection_report_path=doc["selection_report_path"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"spec schema violation: {exc}") from exc
        return spec


def _digest(doc: Mapping) -> str:
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(payload.encode()).hexdigest()


def fit_locked(table: FeatureTable, labels, selected: Sequence[str],
               imputer: ImputerParams, scaler: ScalerParams,
               config: SelectionConfig = SelectionConfig(), finding: str = "",
               catalog_sha256: str = "", selection_report_path: str | None = None) -> FrozenSpec:
    """Refit on the selected (standardized) columns at the fixed operating point.

    ``imputer`` and ``scaler`` are the training-split parameters over the full
    descriptor catalog; their entries for the selected descriptors are frozen
    into the spec.
    """
    selected = list(selected)
    if not selected:
        warnings.warn(f"no descriptors selected for {finding!r}; locking an intercept-only model",
                      RuntimeWarning, stacklevel=2)
    X = table.select(selected).values if selected else np.zeros((table.shape[0], 0))
    y = np.asarray(labels).astype(int)
    cfg = en.ElasticNetConfig(C=config.final_C, l1_ratio=config.final_l1_ratio)
    res = en.fit(X, y, en.class_weights(y), cfg, check_standardized=False)
    if not res.converged:
        log.warning("locked fit for %s did not converge", finding)
    imp = dict(zip(imputer.descriptor_ids, imputer.fill))
    mu = dict(zip(scaler.descriptor_ids, scaler.mean))
    sd = dict(zip(scaler.descriptor_ids, scaler.std))
    return FrozenSpec(
        finding=finding,
        catalog_sha256=catalog_sha256,
        descriptors=tuple(selected),
        impute={d: float(imp[d]) for d in selected},
        scale_mean={d: float(mu[d]) for d in selected},
        scale_std={d: float(sd[d]) for d in selected},
        weights={d: float(w) for d, w in zip(selected, res.weights)},
        intercept=float(res.intercept),
        C=cfg.C,
        l1_ratio=cfg.l1_ratio,
        converged=res.converged,
        selection_report_path=selection_report_path,
    )


def _logit(spec: FrozenSpec, vector: Mapping[str, float | None]) -> float:
    terms = []
    for d in spec.descriptors:
        v = vector.get(d)
        if v is None or not math.isfinite(v):
            v = spec.impute[d]
        sd = spec.scale_std[d]
        z = (v - spec.scale_mean[d]) / sd if sd > 0 else 0.0
        terms.append(spec.weights[d] * z)
    return math.fsum(terms) + spec.intercept


def apply_frozen(spec: FrozenSpec, vector: Mapping[str, float | None],
                 catalog_sha256: str | None = None) -> float:
    """Probability for one raw case vector using only frozen statistics."""
    if catalog_sha256 is not None and catalog_sha256 != spec.catalog_sha256:
        raise DriftError(spec.catalog_sha256, catalog_sha256)
    return float(expit(_logit(spec, vector)))


def apply_frozen_table(spec: FrozenSpec, table: FeatureTable, check_catalog: bool = True) -> np.ndarray:
    if check_catalog and table.catalog.sha256 != spec.catalog_sha256:
        raise DriftError(spec.catalog_sha256, table.catalog.sha256)
    return np.array([apply_frozen(spec, table.row_dict(i)) for i in range(table.shape[0])])


def save_spec(spec: FrozenSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=2,
                                     allow_nan=False) + "\n")


def load_spec(path, catalog_sha256: str | None = None) -> FrozenSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"spec is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SpecError("spec must be a JSON object")
    spec = FrozenSpec.from_dict(doc)
    if spec.sha256 != doc["spec_sha256"]:
        raise SpecHashError("spec content hash mismatch (file was modified)")
    if catalog_sha256 is not None and catalog_sha256 != spec.catalog_sha256:
        raise DriftError(spec.catalog_sha256, catalog_sha256)
    return spec
