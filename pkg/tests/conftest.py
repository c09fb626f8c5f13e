"""Shared fixtures and independent helpers for the test suite."""
from __future__ import annotations

import gzip
import struct

import numpy as np
import pytest

from phenoct import phantom
from phenoct.descriptors import descriptor_catalog, extract_case
from phenoct.features import DescriptorCatalog, build_table
from phenoct.volume_io import LabelMap, VoxelVolume, validate_pair

# datatype code -> (struct format char, bitpix); kept apart from the reader's table
FIXTURE_TYPES = {
    2: ("B", 8), 4: ("h", 16), 8: ("i", 32), 16: ("f", 32), 64: ("d", 64),
    256: ("b", 8), 512: ("H", 16), 768: ("I", 32),
}


def nifti_bytes(values, dims, spacing, datatype=4, slope=0.0, inter=0.0, endian="<",
                magic=b"n+1\x00", ndim=3, vox_offset=352.0):
    """Header and payload packed field by field with ``struct``.

    ``values`` are given in NIfTI (x fastest) order, so the writer never
    reorders arrays itself.
    """
    fmt, bitpix = FIXTURE_TYPES[datatype]
    hdr = bytearray(352)
    struct.pack_into(endian + "i", hdr, 0, 348)
    dim = [ndim, *dims] + [1] * (7 - len(dims))
    struct.pack_into(endian + "8h", hdr, 40, *dim)
    struct.pack_into(endian + "h", hdr, 70, datatype)
    struct.pack_into(endian + "h", hdr, 72, bitpix)
    struct.pack_into(endian + "8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into(endian + "f", hdr, 108, vox_offset)
    struct.pack_into(endian + "f", hdr, 112, slope)
    struct.pack_into(endian + "f", hdr, 116, inter)
    hdr[344:348] = magic
    payload = b"".join(struct.pack(endian + fmt, v) for v in values)
    return bytes(hdr) + payload


def write_fixture(path, *args, gz=False, **kw):
    raw = nifti_bytes(*args, **kw)
    path.write_bytes(gzip.compress(raw) if gz else raw)
    return path


def fortran_values(arr):
    """Values of a 3-D array in x-fastest order, via explicit loops."""
    nx, ny, nz = arr.shape
    return [arr[i, j, k].item() for k in range(nz) for j in range(ny) for i in range(nx)]


def phantom_cohort(n, effect, seed, prevalence=0.2, shape=(48, 48, 48)):
    """Extract a phantom cohort in memory; returns (table, labels, plan)."""
    plan = phantom.PhantomPlan(n=n, prevalence=prevalence, effect=effect, seed=seed, shape=shape)
    cat = phantom.default_catalog()
    dc = descriptor_catalog(cat)
    vecs, ys = [], []
    for case in phantom.generate(plan):
        aligned = validate_pair(VoxelVolume(case.hu, plan.spacing),
                                LabelMap(case.labels, plan.spacing), cat, case.case_id)
        vecs.append((case.case_id, extract_case(aligned, dc).values))
        ys.append(case.label)
    return build_table(vecs, dc), np.array(ys), plan


def table_from_array(X, prefix="f"):
    ids = tuple(f"{prefix}.x.{j}" for j in range(X.shape[1]))
    rows = [(f"c{i:04d}", {d: (None if np.isnan(v) else float(v)) for d, v in zip(ids, X[i])})
            for i in range(X.shape[0])]
    return build_table(rows, DescriptorCatalog(ids))


@pytest.fixture(scope="session")
def catalog():
    return phantom.default_catalog()
