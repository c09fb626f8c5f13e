"""CT volumes, label maps and the anatomy catalog.

Only the single-file NIfTI-1 layout is read. Orientation is ignored; the
per-axis pixel dimensions are the only geometry carried forward, since all
descriptors are computed on the native grid.
"""
from __future__ import annotations

import csv
import gzip
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    CatalogError,
    DataError,
    DimensionError,
    DimMismatchError,
    LabelTypeError,
    SpacingError,
    SpacingMismatchError,
    TruncatedPayloadError,
    UnknownClassError,
    UnsupportedDatatypeError,
)

HEADER_SIZE = 348
SINGLE_FILE_MAGIC = b"n+1\x00"
SPACING_TOL_MM = 1e-4

# datatype code -> numpy dtype (byte order applied at parse time)
DATATYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
FLOAT_CODES = {16, 64}


@dataclass(frozen=True)
class VoxelVolume:
    """HU grid indexed ``[x, y, z]`` with spacing in mm."""

    values: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3:
            raise DimensionError(f"volume must be 3-D, got shape {vals.shape}")
        _check_spacing(self.spacing)
        if not np.all(np.isfinite(vals)):
            raise DataError("volume contains non-finite HU values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3:
            raise DimensionError(f"label map must be 3-D, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise LabelTypeError("labelmap must be integer-typed")
        if lab.size and lab.min() < 0:
            raise DataError("label map contains negative class ids")
        lab = lab.astype(np.int64, copy=True)
        lab.setflags(write=False)
        _check_spacing(self.spacing)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.labels.shape)

    def present_classes(self) -> set[int]:
        ids = np.unique(self.labels)
        return {int(i) for i in ids if i != 0}


def _check_spacing(spacing):
    if len(spacing) != 3:
        raise SpacingError(f"spacing must have 3 components, got {spacing!r}")
    for s in spacing:
        if not (math.isfinite(s) and s > 0):
            raise SpacingError(f"nonpositive spacing {tuple(spacing)}")


# --------------------------------------------------------------------- NIfTI


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_nifti(raw: bytes):
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayloadError(f"truncated header ({len(raw)} bytes)")
    if raw[344:348] != SINGLE_FILE_MAGIC:
        raise BadMagicError(f"bad magic {raw[344:348]!r}")
    for endian in "<>":
        (sizeof_hdr,) = struct.unpack(endian + "i", raw[0:4])
        if sizeof_hdr == HEADER_SIZE:
            break
    else:
        raise BadMagicError("sizeof_hdr is not 348 in either byte order")

    dim = struct.unpack(endian + "8h", raw[40:56])
    datatype, _bitpix = struct.unpack(endian + "2h", raw[70:74])
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset, scl_slope, scl_inter = struct.unpack(endian + "3f", raw[108:120])

    if dim[0] != 3:
        raise DimensionError(f"expected 3 dimensions, header declares {dim[0]}")
    shape = tuple(int(d) for d in dim[1:4])
    if min(shape) < 1:
        raise DimensionError(f"nonpositive dimension in {shape}")
    spacing = tuple(float(p) for p in pixdim[1:4])
    for s in spacing:
        if not (math.isfinite(s) and s > 0):
            raise SpacingError(f"nonpositive spacing {spacing}")
    if datatype not in DATATYPES:
        raise UnsupportedDatatypeError(f"unsupported datatype code {datatype}")

    dtype = np.dtype(DATATYPES[datatype]).newbyteorder(endian)
    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else 352
    count = shape[0] * shape[1] * shape[2]
    nbytes = count * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise TruncatedPayloadError(
            f"truncated payload: need {offset + nbytes} bytes, have {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F")
    return data, spacing, datatype, float(scl_slope), float(scl_inter)


def load_volume(path) -> VoxelVolume:
    """Read a CT volume, applying scale slope/intercept when slope is nonzero."""
    data, spacing, _code, slope, inter = _parse_nifti(_read_bytes(path))
    values = data.astype(np.float64)
    if slope != 0.0 and math.isfinite(slope):
        values = values * slope + (inter if math.isfinite(inter) else 0.0)
    return VoxelVolume(values, spacing)


def load_labelmap(path) -> LabelMap:
    data, spacing, code, _slope, _inter = _parse_nifti(_read_bytes(path))
    if code in FLOAT_CODES:
        raise LabelTypeError("labelmap must be integer-typed")
    return LabelMap(data.astype(np.int64), spacing)


_DTYPE_CODES = {np.dtype(v).newbyteorder("<"): k for k, v in DATATYPES.items()}


def save_nifti(path, data: np.ndarray, spacing, slope: float = 0.0, inter: float = 0.0,
               compresslevel: int = 6) -> None:
    """Write a little-endian single-file NIfTI-1 image.

    Files ending in ``.gz`` are gzip-compressed with a zeroed timestamp so
    repeated writes are byte-identical.
    """
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise DimensionError("only 3-D images are written")
    arr = arr.astype(arr.dtype.newbyteorder("<"))
    try:
        code = _DTYPE_CODES[arr.dtype]
    except KeyError:
        raise UnsupportedDatatypeError(f"cannot write dtype {arr.dtype}") from None

    hdr = bytearray(352)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *arr.shape, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, code, arr.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *[float(s) for s in spacing], 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<3f", hdr, 108, 352.0, slope, inter)
    hdr[123] = 2  # xyzt_units: mm
    hdr[344:348] = SINGLE_FILE_MAGIC
    payload = bytes(hdr) + arr.tobytes(order="F")

    path = Path(path)
    if path.suffix == ".gz":
        with open(path, "wb") as raw_fh:
            with gzip.GzipFile(filename="", mode="wb", fileobj=raw_fh, mtime=0,
                               compresslevel=compresslevel) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)


# ------------------------------------------------------------------- catalog


@dataclass(frozen=True)
class AnatomyCatalog:
    """Declared segmentation classes plus the relations descriptors need.

    Beyond the class list, the catalog configures which derived descriptors
    exist: containment (content fills compartment), the body class used for
    habitus ratios, tubular classes and their long axis, burden thresholds,
    cross-organ contrasts and composite ratios.
    """

    classes: tuple[tuple[int, str], ...]
    containment: tuple[tuple[str, str], ...] = ()
    body_class: str | None = None
    tubular: tuple[tuple[str, str], ...] = ()
    burden_thresholds: tuple[float, ...] = (130.0, 200.0, 300.0)
    contrasts: tuple[tuple[str, str, str], ...] = ()
    composites: tuple[tuple[str, str, str | None], ...] = ()

    def __post_init__(self):
        ids = [c for c, _ in self.classes]
        names = [n for _, n in self.classes]
        if len(set(ids)) != len(ids):
            raise CatalogError("duplicate class ids in catalog")
        if len(set(names)) != len(names):
            raise CatalogError("duplicate class names in catalog")
        if any(c <= 0 for c in ids):
            raise CatalogError("class ids must be positive (0 is background)")
        for n in names:
            if not n or "." in n:
                raise CatalogError(f"invalid class name {n!r}")
        known = set(names)
        for content, comp in self.containment:
            for n in (content, comp):
                if n not in known:
                    raise CatalogError(f"containment references undeclared class {n!r}")
        self._check_cycles()
        if self.body_class is not None and self.body_class not in known:
            raise CatalogError(f"body class {self.body_class!r} is not declared")
        for n, axis in self.tubular:
            if n not in known:
                raise CatalogError(f"tubular class {n!r} is not declared")
            if axis not in ("x", "y", "z"):
                raise CatalogError(f"tubular axis must be x, y or z, got {axis!r}")
        for a, b, _stat in self.contrasts:
            if a not in known or b not in known:
                raise CatalogError(f"contrast references undeclared class ({a}, {b})")

    def _check_cycles(self):
        graph: dict[str, list[str]] = {}
        for content, comp in self.containment:
            graph.setdefault(content, []).append(comp)
        state: dict[str, int] = {}

        def visit(node):
            state[node] = 1
            for nxt in graph.get(node, ()):
                if state.get(nxt) == 1:
                    raise CatalogError(f"containment cycle through {nxt!r}")
                if nxt not in state:
                    visit(nxt)
            state[node] = 2

        for node in list(graph):
            if node not in state:
                visit(node)

    @property
    def ids(self) -> set[int]:
        return {c for c, _ in self.classes}

    def name_of(self, class_id: int) -> str:
        for c, n in self.classes:
            if c == class_id:
                return n
        raise KeyError(class_id)

    def id_of(self, name: str) -> int:
        for c, n in self.classes:
            if n == name:
                return c
        raise KeyError(name)

    def axis_of(self, name: str) -> str | None:
        return dict(self.tubular).get(name)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "AnatomyCatalog":
        try:
            classes = tuple((int(c["id"]), str(c["name"])) for c in doc["classes"])
            containment = tuple((str(r["content"]), str(r["compartment"]))
                                for r in doc.get("containment", []))
            tubular = tuple((str(t["name"]), str(t["axis"])) for t in doc.get("tubular", []))
            thresholds = tuple(float(t) for t in doc.get("burden_thresholds", [130, 200, 300]))
            contrasts = tuple((str(c["a"]), str(c["b"]), str(c.get("stat", "mean")))
                              for c in doc.get("contrasts", []))
            composites = tuple((str(c["num"]), str(c["den"]), c.get("name"))
                               for c in doc.get("composites", []))
        except (KeyError, TypeError, ValueError) as exc:
            raise CatalogError(f"malformed catalog: {exc}") from exc
        body = doc.get("body_class")
        return cls(classes, containment, body, tubular, thresholds, contrasts, composites)

    def to_dict(self) -> dict:
        return {
            "classes": [{"id": c, "name": n} for c, n in self.classes],
            "containment": [{"content": a, "compartment": b} for a, b in self.containment],
            "body_class": self.body_class,
            "tubular": [{"name": n, "axis": a} for n, a in self.tubular],
            "burden_thresholds": list(self.burden_thresholds),
            "contrasts": [{"a": a, "b": b, "stat": s} for a, b, s in self.contrasts],
            "composites": [{"num": n, "den": d, **({"name": nm} if nm else {})}
                           for n, d, nm in self.composites],
        }


def load_catalog(path) -> AnatomyCatalog:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CatalogError(f"catalog is not valid JSON: {exc}") from exc
    return AnatomyCatalog.from_dict(doc)


# --------------------------------------------------------------- alignment


@dataclass(frozen=True)
class AlignedCase:
    volume: VoxelVolume
    labelmap: LabelMap
    catalog: AnatomyCatalog
    case_id: str = ""

    @property
    def spacing(self):
        return self.volume.spacing


def validate_pair(volume: VoxelVolume, labelmap: LabelMap, catalog: AnatomyCatalog,
                  case_id: str = "") -> AlignedCase:
    if volume.dims != labelmap.dims:
        raise DimMismatchError(f"dims differ: volume {volume.dims} vs labels {labelmap.dims}")
    if any(abs(a - b) > SPACING_TOL_MM for a, b in zip(volume.spacing, labelmap.spacing)):
        raise SpacingMismatchError(
            f"spacing differs: volume {volume.spacing} vs labels {labelmap.spacing}")
    unknown = labelmap.present_classes() - catalog.ids
    if unknown:
        raise UnknownClassError(unknown)
    return AlignedCase(volume, labelmap, catalog, case_id)


def mask_voxels(labelmap: LabelMap, class_id: int) -> Iterator[tuple[int, int, int]]:
    """Yield ``(i, j, k)`` for each voxel holding ``class_id``, in index order."""
    for idx in np.argwhere(labelmap.labels == class_id):
        yield tuple(int(v) for v in idx)


# -------------------------------------------------------------- manifests

LABEL_VALUES = {"1": 1, "0": 0, "NA": None, "": None}


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    volume_path: Path
    labels_path: Path
    labels: Mapping[str, int | None] = field(default_factory=dict)


def read_manifest(path) -> tuple[list[CaseRecord], list[str]]:
    """Parse a cohort manifest; relative paths resolve against its folder.

    Returns the records and the ordered finding names.
    """
    path = Path(path)
    base = path.parent
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise DataError("empty manifest")
    header = rows[0]
    if header[:3] != ["case_id", "volume_path", "labels_path"]:
        raise DataError("manifest must start with case_id,volume_path,labels_path")
    findings = header[3:]
    records, seen = [], set()
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"manifest line {line_no}: expected {len(header)} fields")
        cid = row[0]
        if cid in seen:
            raise DataError(f"duplicate case id {cid!r} in manifest")
        seen.add(cid)
        labels = {}
        for name, val in zip(findings, row[3:]):
            if val.strip() not in LABEL_VALUES:
                raise DataError(f"manifest line {line_no}: label {val!r} not in 1/0/NA")
            labels[name] = LABEL_VALUES[val.strip()]
        records.append(CaseRecord(cid, base / row[1], base / row[2], labels))
    return records, findings


def write_manifest(path, records: Sequence[CaseRecord], findings: Sequence[str],
                   relative_to=None) -> None:
    rel = Path(relative_to) if relative_to is not None else Path(path).parent
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "volume_path", "labels_path", *findings])
        for r in records:
            cells = []
            for f in findings:
                v = r.labels.get(f)
                cells.append("NA" if v is None else str(int(v)))
            w.writerow([r.case_id, _relpath(r.volume_path, rel), _relpath(r.labels_path, rel),
                        *cells])


def _relpath(p, base):
    p = Path(p)
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return p.as_posix()
