"""Development-split training: preprocessing once, then one model per finding."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .features import (FeatureTable, ImputerParams, ScalerParams, apply_imputer, apply_scaler,
                       correlation_filter, fit_imputer, fit_scaler)
from .selection import FrozenSpec, SelectionConfig, SelectionReport, cv_select, fit_locked

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Preprocessing:
    imputer: ImputerParams
    scaler: ScalerParams
    kept: tuple[str, ...]
    standardized: FeatureTable


def fit_preprocessing(table: FeatureTable, corr_threshold: float = 0.95) -> Preprocessing:
    """Impute, standardize and correlation-filter the training table.

    Descriptors never observed in training are excluded before the filter.
    """
    imputer = fit_imputer(table)
    imputed = apply_imputer(table, imputer)
    scaler = fit_scaler(imputed)
    z = apply_scaler(imputed, scaler)
    usable = [d for d, bad in zip(table.descriptor_ids, imputer.unusable) if not bad]
    kept = correlation_filter(z.select(usable), corr_threshold)
    return Preprocessing(imputer, scaler, tuple(kept), z)


@dataclass
class TrainedFinding:
    spec: FrozenSpec
    report: SelectionReport
    n_cases: int
    n_positive: int


def train_finding(pre: Preprocessing, labels: Sequence[int | None], finding: str,
                  config: SelectionConfig = SelectionConfig(), catalog_sha256: str = "",
                  parallelism: int = 1, report_path: str | None = None) -> TrainedFinding:
    """Select and lock one finding; cases with unknown labels are left out."""
    lab = [None if v is None else int(v) for v in labels]
    rows = [i for i, v in enumerate(lab) if v is not None]
    y = np.array([lab[i] for i in rows], dtype=int)
    z = pre.standardized.rows(rows).select(list(pre.kept))
    selected, report = cv_select(z, y, config, parallelism)
    spec = fit_locked(z, y, selected, pre.imputer, pre.scaler, config, finding,
                      catalog_sha256, report_path)
    log.info("%s: %d cases, %d positives, %d descriptors selected", finding, len(rows),
             int(y.sum()), len(selected))
    return TrainedFinding(spec, report, len(rows), int(y.sum()))


def train(table: FeatureTable, labels: Mapping[str, Sequence[int | None]],
          config: SelectionConfig = SelectionConfig(), parallelism: int = 1) -> dict[str, TrainedFinding]:
    pre = fit_preprocessing(table, config.correlation_threshold)
    return {f: train_finding(pre, lab, f, config, table.catalog.sha256, parallelism)
            for f, lab in labels.items()}
