"""Per-case descriptor extraction over the anatomy catalog.

The descriptor grid is generated from the catalog: for every class the
morphometry, first-order HU and burden families, then one occupancy per
containment relation, the cross-organ contrasts and the composite ratios.
Descriptor ids follow ``organ.family.name[.param]``.

Each case scans its label grid once to build per-class voxel lists; all
kernels then work from those lists.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import attenuation as att
from . import morphometry as morph
from .errors import DataError, PhenoctError
from .features import DescriptorCatalog, FeatureTable, build_table
from .volume_io import (AlignedCase, AnatomyCatalog, CaseRecord, load_labelmap, load_volume,
                        validate_pair)

log = logging.getLogger(__name__)

MORPH_NAMES = ("volume_mm3", "max_diameter_mm", "surface_area_mm2", "sphericity",
               "elongation", "flatness")


def _fmt_threshold(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t)).replace(".", "p")


def organ_descriptor_ids(name: str, catalog: AnatomyCatalog) -> list[str]:
    ids = [f"{name}.morph.{m}" for m in MORPH_NAMES]
    if catalog.body_class is not None and name != catalog.body_class:
        ids.append(f"{name}.morph.body_ratio")
    if catalog.axis_of(name) is not None:
        ids.append(f"{name}.morph.slice_diam_p90")
    ids += [f"{name}.atten.{s}" for s in att.STAT_NAMES]
    for t in catalog.burden_thresholds:
        ids += [f"{name}.burden.volume_mm3.{_fmt_threshold(t)}",
                f"{name}.burden.fraction.{_fmt_threshold(t)}"]
    return ids


def occupancy_id(content: str, compartment: str, catalog: AnatomyCatalog) -> str:
    n = sum(1 for c, _ in catalog.containment if c == content)
    return f"{content}.burden.occupancy" + (f".{compartment}" if n > 1 else "")


def contrast_id(a: str, b: str, stat: str) -> str:
    return f"{a}_{b}.atten.delta_{stat}"


def composite_id(num: str, den: str, name: str | None) -> str:
    if name:
        return name
    return "composite.ratio." + num.replace(".", "_") + "__per__" + den.replace(".", "_")


def descriptor_catalog(catalog: AnatomyCatalog) -> DescriptorCatalog:
    ids: list[str] = []
    for _cid, name in catalog.classes:
        ids += organ_descriptor_ids(name, catalog)
    ids += [occupancy_id(c, k, catalog) for c, k in catalog.containment]
    for a, b, stat in catalog.contrasts:
        if stat not in att.STAT_NAMES:
            raise DataError(f"contrast statistic {stat!r} is not a first-order statistic")
        ids.append(contrast_id(a, b, stat))
    known = set(ids)
    for num, den, name in catalog.composites:
        for d in (num, den):
            if d not in known:
                raise DataError(f"composite references unknown descriptor {d!r}")
        ids.append(composite_id(num, den, name))
    return DescriptorCatalog(tuple(ids))


@dataclass
class CaseDescriptorVector:
    case_id: str
    values: dict[str, float | None]
    log: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"case_id": self.case_id, "values": self.values, "log": self.log},
                          sort_keys=True)


def class_coordinates(labels: np.ndarray) -> dict[int, np.ndarray]:
    """Voxel coordinates of every nonzero class from one pass over the grid.

    Coordinates come back in lexicographic index order.
    """
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_ids = flat[order]
    ids, starts = np.unique(sorted_ids, return_index=True)
    bounds = list(starts[1:]) + [flat.size]
    out = {}
    for cid, lo, hi in zip(ids, starts, bounds):
        if cid == 0:
            continue
        idx = order[lo:hi]
        out[int(cid)] = np.stack(np.unravel_index(idx, labels.shape), axis=1)
    return out


def _organ_values(name, coords, hu, spacing, catalog, body_volume):
    vals: dict[str, float | None] = {}
    res = morph.morphometry(coords, spacing, body_volume, catalog.axis_of(name))
    stats = att.firstorder_from_values(hu)
    for m in MORPH_NAMES:
        vals[f"{name}.morph.{m}"] = None if res is None else getattr(res, m)
    if catalog.body_class is not None and name != catalog.body_class:
        vals[f"{name}.morph.body_ratio"] = None if res is None else res.body_ratio
    if catalog.axis_of(name) is not None:
        vals[f"{name}.morph.slice_diam_p90"] = None if res is None else res.slice_diameter_p90_mm
    for s in att.STAT_NAMES:
        vals[f"{name}.atten.{s}"] = None if stats is None else float(getattr(stats, s))
    voxel_volume = spacing[0] * spacing[1] * spacing[2]
    for t in catalog.burden_thresholds:
        b = att.burden_from_values(hu, t, voxel_volume)
        vals[f"{name}.burden.volume_mm3.{_fmt_threshold(t)}"] = None if b is None else b.burden_volume_mm3
        vals[f"{name}.burden.fraction.{_fmt_threshold(t)}"] = None if b is None else b.burden_fraction
    return vals, stats


def extract_case(case: AlignedCase, descriptors: DescriptorCatalog | None = None) -> CaseDescriptorVector:
    catalog = case.catalog
    descriptors = descriptors or descriptor_catalog(catalog)
    spacing = case.volume.spacing
    hu_grid = case.volume.values

    coords_by_id = class_coordinates(case.labelmap.labels)
    empty = np.empty((0, 3), dtype=np.int64)
    coords = {name: coords_by_id.get(cid, empty) for cid, name in catalog.classes}
    own = dict(coords)
    if catalog.body_class is not None and coords[catalog.body_class].shape[0]:
        # Shape of the body is the envelope of every segmented voxel (organs carry
        # their own labels); its HU summaries stay on body-labelled tissue so they
        # do not duplicate organ attenuation.
        allc = np.concatenate([c for c in coords_by_id.values()])
        coords[catalog.body_class] = allc[np.lexsort((allc[:, 2], allc[:, 1], allc[:, 0]))]
    body_volume = None
    if catalog.body_class is not None:
        body_volume = morph.mask_volume(coords[catalog.body_class], spacing)

    values: dict[str, float | None] = {}
    stats: dict[str, att.HUStats | None] = {}
    warnings_: list[str] = []
    for _cid, name in catalog.classes:
        c, hc = coords[name], own[name]
        try:
            hu = hu_grid[hc[:, 0], hc[:, 1], hc[:, 2]]
            vals, st = _organ_values(name, c, hu, spacing, catalog, body_volume)
        except Exception as exc:  # isolate one organ's failure
            warnings_.append(f"{name}: {type(exc).__name__}: {exc}")
            log.warning("case %s organ %s failed: %s", case.case_id, name, exc)
            vals = {d: None for d in organ_descriptor_ids(name, catalog)}
            st = None
        values.update(vals)
        stats[name] = st

    voxel_volume = spacing[0] * spacing[1] * spacing[2]
    for content, comp in catalog.containment:
        occ = att.occupancy_from_counts(own[content].shape[0], own[comp].shape[0],
                                        voxel_volume)
        values[occupancy_id(content, comp, catalog)] = None if occ is None else occ.occupancy
    for a, b, stat in catalog.contrasts:
        values[contrast_id(a, b, stat)] = att.cross_organ_contrast(stats[a], stats[b], stat)
    for num, den, name in catalog.composites:
        values[composite_id(num, den, name)] = att.composite_ratio(values.get(num), values.get(den))

    ordered = {d: values.get(d) for d in descriptors.ids}
    extra = set(values) - set(descriptors.ids)
    if extra:
        raise DataError(f"descriptor catalog does not cover {sorted(extra)[:3]}")
    run_log = {
        "voxel_counts": {name: int(coords[name].shape[0]) for _c, name in catalog.classes},
        "warnings": warnings_,
    }
    return CaseDescriptorVector(case.case_id, ordered, run_log)


def _load_and_extract(args):
    record, catalog, descriptors = args
    try:
        vol = load_volume(record.volume_path)
        lab = load_labelmap(record.labels_path)
        aligned = validate_pair(vol, lab, catalog, record.case_id)
        return extract_case(aligned, descriptors), None
    except (PhenoctError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


@dataclass
class CohortResult:
    table: FeatureTable
    ledger: list[dict]
    logs: dict[str, dict]


def extract_cohort(records: Sequence[CaseRecord], catalog: AnatomyCatalog,
                   parallelism: int = 1) -> CohortResult:
    """Extract every case; failed loads are skipped and recorded in the ledger.

    Row order follows ``records`` whatever the parallelism.
    """
    records = list(records)
    if not records:
        raise DataError("empty manifest")
    descriptors = descriptor_catalog(catalog)
    jobs = [(r, catalog, descriptors) for r in records]
    if parallelism > 1:
        with ProcessPoolExecutor(parallelism) as ex:
            results = list(ex.map(_load_and_extract, jobs))
    else:
        results = [_load_and_extract(j) for j in jobs]
    ledger, vecs, logs = [], [], {}
    for rec, (vec, err) in zip(records, results):
        if vec is None:
            ledger.append({"case_id": rec.case_id, "error": err})
        else:
            vecs.append((rec.case_id, vec.values))
            logs[rec.case_id] = vec.log
    if not vecs:
        raise DataError("every case in the manifest failed to load")
    return CohortResult(build_table(vecs, descriptors), ledger, logs)
