import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import table_from_array
from phenoct.errors import TableError
from phenoct.features import (DescriptorCatalog, apply_imputer, apply_scaler, build_table,
                              correlation_filter, fit_imputer, fit_scaler, read_table, write_table)

CAT3 = DescriptorCatalog(("a.x.1", "a.x.2", "a.x.3"))


def test_build_table_missing_flag():
    t = build_table({"c1": {"a.x.1": 1.0, "a.x.2": 2.0, "a.x.3": 3.0},
                     "c2": {"a.x.1": 4.0, "a.x.2": None, "a.x.3": 6.0}}, CAT3)
    assert t.missing.sum() == 1 and t.missing[1, 1]
    assert t.row_dict(1)["a.x.2"] is None


def test_build_table_guards():
    with pytest.raises(TableError, match="no cases"):
        build_table({}, CAT3)
    with pytest.raises(TableError, match="duplicate"):
        build_table([("c", {}), ("c", {})], CAT3)
    with pytest.raises(TableError, match="unknown descriptor"):
        build_table({"c": {"zz.y.1": 1.0}}, CAT3)
    with pytest.raises(TableError):
        DescriptorCatalog(("a", "a"))


def test_catalog_hash_depends_on_order():
    assert CAT3.sha256 == DescriptorCatalog(CAT3.ids).sha256
    assert CAT3.sha256 != DescriptorCatalog(CAT3.ids[::-1]).sha256


# ------------------------------------------------------------------- imputer

def test_imputer_examples():
    t = build_table({"a": {"a.x.1": 1.0, "a.x.2": 5.0}, "b": {"a.x.1": 2.0, "a.x.2": 5.0},
                     "c": {"a.x.1": 100.0, "a.x.2": 5.0}, "d": {}}, CAT3)
    p = fit_imputer(t)
    assert p.fill_for("a.x.1") == 2.0
    assert p.fill_for("a.x.2") == 5.0
    assert list(p.unusable) == [False, False, True]
    out = apply_imputer(t, p)
    assert out.values[3, 0] == 2.0 and not out.missing.any()


def test_imputer_identity_on_complete_table():
    t = table_from_array(np.random.default_rng(1).normal(size=(6, 3)))
    out = apply_imputer(t, fit_imputer(t))
    assert np.array_equal(out.values, t.values)


def test_imputer_frozen_fill_on_external_table():
    train = table_from_array(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]]))
    ext = table_from_array(np.array([[np.nan, 1.0], [np.nan, np.nan]]))
    out = apply_imputer(ext, fit_imputer(train))
    assert list(out.column("f.x.0")) == [3.0, 3.0]
    assert list(out.column("f.x.1")) == [1.0, 4.0]


def test_imputer_catalog_check():
    a = table_from_array(np.ones((2, 2)))
    b = table_from_array(np.ones((2, 3)))
    with pytest.raises(TableError):
        apply_imputer(b, fit_imputer(a))


# -------------------------------------------------------------------- scaler

def test_scaler_examples():
    t = table_from_array(np.array([[0.0, 7.0], [10.0, 7.0]]))
    p = fit_scaler(t)
    z = apply_scaler(t, p)
    assert list(z.column("f.x.0")) == [-1.0, 1.0]
    assert list(z.column("f.x.1")) == [0.0, 0.0]
    assert list(p.constant) == [False, True]
    mid = apply_scaler(table_from_array(np.array([[5.0, 7.0]])), p)
    assert mid.values[0, 0] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=40))
def test_standardized_column_has_zero_mean_unit_std(col):
    t = table_from_array(np.array(col)[:, None])
    z = apply_scaler(t, fit_scaler(t)).values[:, 0]
    if fit_scaler(t).std[0] > 1e-6:
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1.0) < 1e-9


# -------------------------------------------------------- correlation filter

def pearson(a, b):
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    num = math.fsum((x - ma) * (y - mb) for x, y in zip(a, b))
    den = math.sqrt(math.fsum((x - ma) ** 2 for x in a) * math.fsum((y - mb) ** 2 for y in b))
    return num / den


def test_correlation_examples():
    f1 = np.arange(10.0)
    assert correlation_filter(table_from_array(np.c_[f1, 2 * f1])) == ["f.x.0"]
    assert correlation_filter(table_from_array(np.c_[f1, -f1])) == ["f.x.0"]
    rng = np.random.default_rng(2024)
    X = rng.normal(size=(1000, 2))
    assert abs(pearson(list(X[:, 0]), list(X[:, 1]))) < 0.95
    assert correlation_filter(table_from_array(X)) == ["f.x.0", "f.x.1"]


def test_correlation_filter_greedy_and_constants():
    rng = np.random.default_rng(5)
    a = rng.normal(size=50)
    b = rng.normal(size=50)
    X = np.c_[np.ones(50), a, b, a + 1e-3 * rng.normal(size=50), 3 * b]
    assert correlation_filter(table_from_array(X)) == ["f.x.1", "f.x.2"]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_correlation_filter_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(30, 3))
    X = np.c_[base, base @ rng.normal(size=(3, 3)) + 0.05 * rng.normal(size=(30, 3))]
    cols = [list(X[:, j]) for j in range(X.shape[1])]
    kept = []
    for j, c in enumerate(cols):
        if max(c) == min(c):
            continue
        if all(abs(pearson(cols[k], c)) <= 0.95 for k in kept):
            kept.append(j)
    # greedy in order: a column is dropped only by an earlier column that is itself kept
    assert correlation_filter(table_from_array(X)) == [f"f.x.{j}" for j in kept]


# ------------------------------------------------------------------------ io

@pytest.mark.parametrize("suffix", [".csv", ".jsonl"])
def test_table_roundtrip(tmp_path, suffix):
    X = np.array([[0.1, np.nan, 1e-17], [1 / 3, 2.0, -7.25e5]])
    t = table_from_array(X)
    p = tmp_path / f"t{suffix}"
    write_table(t, p, {"seed": 3})
    back = read_table(p)
    assert back.case_ids == t.case_ids and back.descriptor_ids == t.descriptor_ids
    assert np.array_equal(back.missing, t.missing)
    assert np.array_equal(np.nan_to_num(back.values, nan=-1), np.nan_to_num(t.values, nan=-1))
    write_table(back, tmp_path / f"u{suffix}", {"seed": 3})
    assert p.read_bytes() == (tmp_path / f"u{suffix}").read_bytes()


def test_read_table_rejects_bad_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("id,a\n1,2\n")
    with pytest.raises(TableError):
        read_table(p)
