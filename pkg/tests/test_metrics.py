import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ap_ranks, auc_pairs, bootstrap_oracle, percentile_oracle
from phenoct.errors import UnstableBootstrapError
from phenoct.metrics import (EvalConfig, MetricReport, auc, average_precision, bootstrap_ci,
                             macro_average, paired_delta)
from phenoct.rng import bootstrap_indices, substream


def matches(got, frac):
    """Bitwise when the rational has a power-of-two denominator, else 1e-12."""
    d = frac.denominator
    if d & (d - 1) == 0:
        return got == float(frac)
    return abs(got - float(frac)) <= 1e-12


# --------------------------------------------------------------------- auc

def test_auc_examples():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert auc([0.1, 0.2], [1, 1]) is None
    with pytest.raises(ValueError, match="finite"):
        auc([0.1, float("nan")], [0, 1])


def test_ap_examples():
    assert average_precision([0.8, 0.4, 0.35, 0.1], [1, 0, 1, 0]) == pytest.approx(0.8333, abs=1e-4)
    assert average_precision([0.9, 0.8, 0.1, 0.0], [1, 1, 0, 0]) == 1.0
    for n in range(2, 9):
        assert average_precision(np.arange(n, 0, -1.0), [0] * (n - 1) + [1]) == pytest.approx(1 / n)
    assert average_precision([0.1, 0.2], [0, 0]) is None


def test_ap_ties_keep_input_order():
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5


@pytest.mark.parametrize("n", range(1, 7))
def test_enumeration_small_n(n):
    """Every label vector against every score vector over a 3-letter alphabet."""
    for labels in itertools.product((0, 1), repeat=n):
        for scores in itertools.product((0.0, 0.5, 1.0), repeat=n):
            if 0 < sum(labels) < n:
                assert matches(auc(scores, labels), auc_pairs(scores, labels))
            if sum(labels) > 0:
                assert matches(average_precision(scores, labels), ap_ranks(scores, labels))
            if n > 4:
                break  # full score enumeration only up to n = 4


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=12))
def test_random_sets_match_oracles(pairs):
    scores = [float(s) / 5 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if 0 < sum(labels) < len(labels):
        assert matches(auc(scores, labels), auc_pairs(scores, labels))
    if sum(labels):
        assert matches(average_precision(scores, labels), ap_ranks(scores, labels))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=40), st.integers(0, 2**31))
def test_auc_rank_invariance_and_symmetry(scores, seed):
    y = np.random.default_rng(seed).integers(0, 2, len(scores))
    if y.sum() in (0, len(y)):
        return
    s = np.asarray(scores, dtype=float)
    a = auc(s, y)
    assert 0.0 <= a <= 1.0
    assert auc(3 * s + 7, y) == a
    assert auc(s, 1 - y) == pytest.approx(1 - a, abs=1e-12)
    assert auc(-s, y) == pytest.approx(1 - a, abs=1e-12)


# --------------------------------------------------------------- substreams

def test_substreams_are_addressable():
    a = substream(5, 0, 17).integers(0, 100, 10)
    b = substream(5, 0, 17).integers(0, 100, 10)
    c = substream(5, 1, 17).integers(0, 100, 10)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.array_equal(bootstrap_indices(5, 0, 17, 10), substream(5, 0, 17).integers(0, 10, 10))


# ---------------------------------------------------------------- bootstrap

TOY_S = [0.9, 0.2, 0.65, 0.4, 0.55, 0.1]
TOY_Y = [1, 0, 1, 0, 0, 1]


@pytest.mark.parametrize("metric,name", [(auc, "auc"), (average_precision, "ap")])
def test_bootstrap_matches_bruteforce(metric, name):
    cfg = EvalConfig(n_bootstrap=400, seed=13)
    rep = bootstrap_ci(metric, TOY_S, TOY_Y, cfg)
    lo, hi, n_valid = bootstrap_oracle(metric, TOY_S, TOY_Y, 400, 13,
                                       needs_negatives=metric is auc)
    assert rep.metric == name
    assert rep.n_valid_replicates == n_valid
    assert rep.n_skipped_replicates == 400 - n_valid
    assert rep.ci_low == pytest.approx(lo, abs=1e-12) and rep.ci_high == pytest.approx(hi, abs=1e-12)
    assert rep.point == metric(TOY_S, TOY_Y)


def test_bootstrap_deterministic_and_parallel_invariant():
    rng = np.random.default_rng(0)
    s = rng.normal(size=60)
    y = (s + rng.normal(size=60) > 0).astype(int)
    cfg = EvalConfig(n_bootstrap=500, seed=4)
    a = bootstrap_ci(auc, s, y, cfg)
    b = bootstrap_ci(auc, s, y, cfg)
    c = bootstrap_ci(auc, s, y, cfg, parallelism=4)
    assert a == b == c
    assert 0 <= a.ci_low <= a.ci_high <= 1
    assert bootstrap_ci(auc, s, y, EvalConfig(n_bootstrap=500, seed=5)) != a


def test_bootstrap_constant_metric_zero_width():
    s = np.r_[np.zeros(20), np.ones(20)]
    y = np.r_[np.zeros(20), np.ones(20)].astype(int)
    rep = bootstrap_ci(auc, s, y, EvalConfig(n_bootstrap=300))
    assert rep.ci_low == rep.ci_high == 1.0


def test_unstable_bootstrap():
    # two cases: half of all replicates draw a single class
    with pytest.raises(UnstableBootstrapError, match="unstable bootstrap"):
        bootstrap_ci(auc, [0.2, 0.7], [0, 1], EvalConfig(n_bootstrap=60))
    rep = bootstrap_ci(auc, [0.2, 0.7], [0, 1], EvalConfig(n_bootstrap=2000))
    assert rep.n_valid_replicates + rep.n_skipped_replicates == 2000
    with pytest.raises(ValueError):
        bootstrap_ci(auc, [0.1, 0.2, 0.3], [0, 0, 0], EvalConfig(n_bootstrap=100))


# ------------------------------------------------------------------- paired

def test_paired_delta_identity():
    rng = np.random.default_rng(1)
    s = rng.normal(size=50)
    y = rng.integers(0, 2, 50)
    for fn in (auc, average_precision):
        rep = paired_delta(s, s, y, fn, EvalConfig(n_bootstrap=300))
        assert (rep.point, rep.ci_low, rep.ci_high) == (0.0, 0.0, 0.0)


def test_paired_delta_separating_vs_antiseparating():
    y = [0, 0, 0, 1, 1, 1]
    a = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9]
    b = [0.9, 0.8, 0.7, 0.3, 0.2, 0.1]
    rep = paired_delta(a, b, y, auc, EvalConfig(n_bootstrap=200))
    assert rep.point == 1.0 == auc(a, y) - auc(b, y)


def test_paired_delta_point_is_difference():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 2, 40)
    a, b = rng.normal(size=40) + y, rng.normal(size=40)
    rep = paired_delta(a, b, y, average_precision, EvalConfig(n_bootstrap=200, seed=3))
    assert rep.point == average_precision(a, y) - average_precision(b, y)
    # joint resampling: each replicate's delta uses the same indices for a and b
    r0 = bootstrap_indices(3, 0, 0, 40)
    assert rep.n_valid_replicates == 200 or rep.n_skipped_replicates > 0
    assert r0.shape == (40,)


# -------------------------------------------------------------------- macro

def test_macro_from_reports():
    r1 = MetricReport("auc", 0.8, None, None, 10, 3)
    r2 = MetricReport("auc", 0.9, None, None, 20, 5)
    m = macro_average([r1, r2])
    assert m.point == pytest.approx(0.85) and m.n_cases == 30
    assert macro_average([r1]).point == 0.8


def test_macro_bootstrap_skips_undefined_findings():
    rng = np.random.default_rng(3)
    f1 = (rng.normal(size=40), rng.integers(0, 2, 40))
    y2 = np.zeros(40, int)
    y2[:2] = 1
    f2 = (rng.normal(size=40), y2)
    cfg = EvalConfig(n_bootstrap=300, seed=2)
    rep = macro_average([f1, f2], auc, cfg)
    assert rep.point == pytest.approx((auc(*f1) + auc(*f2)) / 2)
    # replicate r: finding f uses stream f; mean over findings defined in that replicate
    vals = []
    for r in range(300):
        got = []
        for f, (s, y) in enumerate([f1, f2]):
            idx = bootstrap_indices(2, f, r, 40)
            v = auc(s[idx], y[idx])
            if v is not None:
                got.append(v)
        vals.append(math.fsum(got) / len(got))
    assert rep.n_valid_replicates == 300
    assert rep.ci_low == pytest.approx(percentile_oracle(vals, 2.5), abs=1e-12)
    assert rep.ci_high == pytest.approx(percentile_oracle(vals, 97.5), abs=1e-12)
    assert macro_average([f1, f2], auc, cfg, parallelism=3) == rep


def test_eval_config_guards():
    with pytest.raises(ValueError):
        EvalConfig(n_bootstrap=0)
    with pytest.raises(ValueError):
        EvalConfig(ci_level=1.0)
