"""Feature tables and the frozen preprocessing chain.

Imputation, standardisation and the correlation filter are fitted once on
the development training split; the fitted parameters are then applied
unchanged to every other cohort.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import TableError
from .stats import median

NA = "NA"


@dataclass(frozen=True)
class DescriptorCatalog:
    """Ordered descriptor ids (``organ.family.name[.param]``).

    The order is the canonical column order and the tie-break order of the
    correlation filter.
    """

    ids: tuple[str, ...]

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise TableError(f"duplicate descriptor ids: {dupes}")
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def __contains__(self, item):
        return item in self._index

    @property
    def _index(self) -> dict[str, int]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {d: i for i, d in enumerate(self.ids)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def index(self, descriptor_id: str) -> int:
        return self._index[descriptor_id]

    @property
    def sha256(self) -> str:
        return catalog_hash(self.ids)


def catalog_hash(ids: Iterable[str]) -> str:
    payload = json.dumps(list(ids), separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class FeatureTable:
    case_ids: tuple[str, ...]
    catalog: DescriptorCatalog
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        miss = np.array(self.missing, dtype=bool)
        shape = (len(self.case_ids), len(self.catalog))
        if vals.shape != shape or miss.shape != shape:
            raise TableError(f"table shape {vals.shape}/{miss.shape} does not match {shape}")
        vals[miss] = np.nan
        if np.any(np.isnan(vals) & ~miss):
            raise TableError("NaN value not flagged as missing")
        vals.setflags(write=False)
        miss.setflags(write=False)
        object.__setattr__(self, "case_ids", tuple(str(c) for c in self.case_ids))
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "missing", miss)

    @property
    def shape(self):
        return self.values.shape

    @property
    def descriptor_ids(self) -> tuple[str, ...]:
        return self.catalog.ids

    def column(self, descriptor_id: str) -> np.ndarray:
        return self.values[:, self.catalog.index(descriptor_id)]

    def select(self, descriptor_ids: Sequence[str]) -> "FeatureTable":
        cols = [self.catalog.index(d) for d in descriptor_ids]
        return FeatureTable(self.case_ids, DescriptorCatalog(tuple(descriptor_ids)),
                            self.values[:, cols], self.missing[:, cols])

    def rows(self, indices) -> "FeatureTable":
        idx = np.asarray(indices, dtype=np.intp)
        return FeatureTable(tuple(self.case_ids[i] for i in idx), self.catalog,
                            self.values[idx], self.missing[idx])

    def row_dict(self, i: int) -> dict[str, float | None]:
        return {d: (None if self.missing[i, j] else float(self.values[i, j]))
                for j, d in enumerate(self.catalog.ids)}


def build_table(case_vectors: Mapping[str, Mapping[str, float | None]] | Sequence,
                catalog: DescriptorCatalog) -> FeatureTable:
    """Assemble ``{case_id: {descriptor_id: value or None}}`` into a table.

    A sequence of ``(case_id, vector)`` pairs is accepted as well so that
    duplicate ids can be detected.
    """
    items = list(case_vectors.items()) if isinstance(case_vectors, Mapping) else list(case_vectors)
    if not items:
        raise TableError("no cases")
    ids = [str(cid) for cid, _ in items]
    if len(set(ids)) != len(ids):
        dupes = sorted({c for c in ids if ids.count(c) > 1})
        raise TableError(f"duplicate case ids: {dupes}")
    vals = np.full((len(items), len(catalog)), np.nan)
    for r, (cid, vec) in enumerate(items):
        for key, v in vec.items():
            if key not in catalog:
                raise TableError(f"unknown descriptor id {key!r} in case {cid!r}")
            if v is not None and math.isfinite(v):
                vals[r, catalog.index(key)] = float(v)
    return FeatureTable(tuple(ids), catalog, vals, np.isnan(vals))


# ---------------------------------------------------------------- imputer


@dataclass(frozen=True)
class ImputerParams:
    descriptor_ids: tuple[str, ...]
    fill: np.ndarray
    unusable: np.ndarray = field(default=None)

    def fill_for(self, descriptor_id: str) -> float:
        return float(self.fill[self.descriptor_ids.index(descriptor_id)])


def fit_imputer(table: FeatureTable) -> ImputerParams:
    """Per-descriptor median of observed training entries.

    Descriptors never observed are flagged unusable and filled with 0.
    """
    p = table.shape[1]
    fill = np.zeros(p)
    unusable = np.zeros(p, dtype=bool)
    for j in range(p):
        obs = table.values[~table.missing[:, j], j]
        if obs.size == 0:
            unusable[j] = True
        else:
            fill[j] = median(obs)
    return ImputerParams(table.descriptor_ids, fill, unusable)


def _check_catalog(table: FeatureTable, ids: Sequence[str], what: str):
    if tuple(table.descriptor_ids) != tuple(ids):
        raise TableError(f"{what} was fitted on a different descriptor catalog")


def apply_imputer(table: FeatureTable, params: ImputerParams) -> FeatureTable:
    _check_catalog(table, params.descriptor_ids, "imputer")
    vals = np.where(table.missing, params.fill[None, :], table.values)
    return FeatureTable(table.case_ids, table.catalog, vals, np.zeros_like(table.missing))


# ----------------------------------------------------------------- scaler


@dataclass(frozen=True)
class ScalerParams:
    descriptor_ids: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.std == 0.0


def fit_scaler(table: FeatureTable) -> ScalerParams:
    if table.missing.any():
        raise TableError("scaler must be fitted on an imputed table")
    mean = table.values.mean(axis=0)
    std = np.sqrt(((table.values - mean) ** 2).mean(axis=0))
    return ScalerParams(table.descriptor_ids, mean, std)


def standardize(values: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (values - mean) / safe, 0.0)


def apply_scaler(table: FeatureTable, params: ScalerParams) -> FeatureTable:
    _check_catalog(table, params.descriptor_ids, "scaler")
    if table.missing.any():
        raise TableError("scaler must be applied to an imputed table")
    z = standardize(table.values, params.mean[None, :], params.std[None, :])
    return FeatureTable(table.case_ids, table.catalog, z, table.missing)


# ------------------------------------------------------- correlation filter


def correlation_filter(table: FeatureTable, threshold: float = 0.95) -> list[str]:
    """Greedy pairwise filter in catalog order.

    Constant columns are dropped first; then for each pair ``i < j`` with
    ``|r| > threshold`` where ``i`` is still kept, ``j`` is dropped.
    """
    x = table.values
    if table.missing.any():
        raise TableError("correlation filter needs a complete table")
    centred = x - x.mean(axis=0)
    norms = np.sqrt((centred ** 2).sum(axis=0))
    keep = norms > 0
    live = np.flatnonzero(keep)
    if live.size > 1:
        u = centred[:, live] / norms[live]
        r = np.clip(u.T @ u, -1.0, 1.0)
        alive = np.ones(live.size, dtype=bool)
        for a in range(live.size):
            if not alive[a]:
                continue
            hit = np.abs(r[a, a + 1:]) > threshold
            alive[a + 1:][hit] = False
        keep[live] = alive
    return [d for d, k in zip(table.descriptor_ids, keep) if k]


# --------------------------------------------------------------------- io


def _fmt(v: float) -> str:
    return repr(float(v))


def write_table_csv(table: FeatureTable, path, provenance: Mapping | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if provenance is not None:
            fh.write("# provenance: " + json.dumps(provenance, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", *table.descriptor_ids])
        for i, cid in enumerate(table.case_ids):
            w.writerow([cid, *(NA if table.missing[i, j] else _fmt(table.values[i, j])
                               for j in range(table.shape[1]))])


def read_table_csv(path) -> FeatureTable:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows or rows[0][:1] != ["case_id"]:
        raise TableError(f"{path}: not a feature table (missing case_id header)")
    catalog = DescriptorCatalog(tuple(rows[0][1:]))
    vecs = []
    for row in rows[1:]:
        if len(row) != len(rows[0]):
            raise TableError(f"{path}: ragged row for case {row[:1]}")
        vecs.append((row[0], {d: (None if v == NA else float(v))
                              for d, v in zip(catalog.ids, row[1:])}))
    return build_table(vecs, catalog)


def write_table_jsonl(table: FeatureTable, path, provenance: Mapping | None = None) -> None:
    with open(path, "w") as fh:
        head = {"descriptors": list(table.descriptor_ids)}
        if provenance is not None:
            head["provenance"] = provenance
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for i, cid in enumerate(table.case_ids):
            vec = table.row_dict(i)
            fh.write(json.dumps({"case_id": cid, "values": [vec[d] for d in table.descriptor_ids]})
                     + "\n")


def read_table_jsonl(path) -> FeatureTable:
    lines = [json.loads(s) for s in Path(path).read_text().splitlines() if s.strip()]
    if not lines or "descriptors" not in lines[0]:
        raise TableError(f"{path}: missing descriptor header line")
    catalog = DescriptorCatalog(tuple(lines[0]["descriptors"]))
    vecs = [(r["case_id"], dict(zip(catalog.ids, r["values"]))) for r in lines[1:]]
    return build_table(vecs, catalog)


def read_table(path) -> FeatureTable:
    return read_table_jsonl(path) if str(path).endswith(".jsonl") else read_table_csv(path)


def write_table(table: FeatureTable, path, provenance: Mapping | None = None) -> None:
    if str(path).endswith(".jsonl"):
        write_table_jsonl(table, path, provenance)
    else:
        write_table_csv(table, path, provenance)
