import math
import warnings

import numpy as np
import pytest

from oracles import en_objective, en_smooth, grid_refine_minimum
from phenoct import elasticnet as en
from phenoct.errors import DegenerateLabelsError


def problem(seed, n=50, p=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    X = (X - X.mean(0)) / X.std(0)
    logits = X @ rng.normal(scale=1.5, size=p) + rng.normal(scale=0.5)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-logits))).astype(int)
    if y.sum() < 2:
        y[:2] = 1
    if y.sum() > n - 2:
        y[:2] = 0
    return X, y


def test_class_weights():
    y = np.array([1] * 10 + [0] * 90)
    s = en.class_weights(y)
    assert s[0] == 5.0 and s[-1] == pytest.approx(0.5556, abs=1e-4)
    assert np.all(en.class_weights([0, 1] * 25) == 1.0)
    with pytest.raises(DegenerateLabelsError):
        en.class_weights([1, 1, 1])


def test_soft_threshold():
    assert en.soft_threshold(3.0, 1.0) == 2.0
    assert en.soft_threshold(-0.5, 1.0) == 0.0
    assert en.soft_threshold(-3.0, 1.0) == -2.0


def test_objective_at_zero_model():
    X, _ = problem(0, n=40)
    y = np.array([0, 1] * 20)
    cfg = en.ElasticNetConfig(C=0.3, l1_ratio=0.5)
    assert en.objective(X, y, None, np.zeros(2), 0.0, cfg) == pytest.approx(0.3 * 40 * math.log(2))


def test_objective_structure():
    X, y = problem(1)
    w = np.array([0.4, -1.2])
    ridge = en.ElasticNetConfig(C=1.0, l1_ratio=0.0)
    loss = en.objective(X, y, None, np.zeros(2), 0.3, ridge)
    assert en.objective(X, y, None, w, 0.3, ridge) == pytest.approx(
        en_smooth(X, y, np.ones(50), w, 0.3, 1.0, 0.0))
    # doubling every sample weight doubles the loss term
    s = np.linspace(0.5, 2.0, 50)
    cfg = en.ElasticNetConfig(C=0.7, l1_ratio=0.5)
    pen = 0.5 * np.abs(w).sum() + 0.25 * w @ w
    one = en.objective(X, y, s, w, 0.1, cfg) - pen
    two = en.objective(X, y, 2 * s, w, 0.1, cfg) - pen
    assert two == pytest.approx(2 * one, rel=1e-12)
    assert loss > 0


def test_predict_proba():
    assert np.all(en.predict_proba(np.ones((3, 2)), [0, 0], 0.0) == 0.5)
    assert en.predict_proba([[1.0]], [1.0], 0.0)[0] == pytest.approx(0.7311, abs=1e-4)
    grid = np.linspace(-3, 3, 20)[:, None]
    p = en.predict_proba(np.c_[grid, np.zeros(20)], [0.8, -2.0], 0.1)
    assert np.all(np.diff(p) >= 0)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("C,alpha", [(0.05, 0.5), (0.5, 0.9), (1.0, 0.1)])
def test_fit_matches_grid_oracle(seed, C, alpha):
    X, y = problem(seed)
    s = en.class_weights(y)
    res = en.fit(X, y, s, en.ElasticNetConfig(C=C, l1_ratio=alpha))
    best, _ = grid_refine_minimum(X, y, s, C, alpha)
    assert res.converged
    assert res.objective == pytest.approx(en_objective(X, y, s, res.weights, res.intercept, C, alpha),
                                          abs=1e-12)
    assert res.objective <= best + 1e-6
    assert best <= res.objective + 1e-6


def test_kkt_check():
    X, y = problem(2)
    s = en.class_weights(y)
    cfg = en.ElasticNetConfig(C=0.5, l1_ratio=0.5)
    res = en.fit(X, y, s, cfg)
    ok, r = en.kkt_check(X, y, s, res, cfg)
    assert ok and r <= 1e-4
    bumped = en.FitResult(res.weights + np.array([0.1, 0.0]), res.intercept, 0, 0, True, 0)
    assert not en.kkt_check(X, y, s, bumped, cfg)[0]


def _weighted_null(X, y, s):
    pbar = float(np.sum(s * y) / np.sum(s))
    return np.abs(X.T @ (s * (y - pbar))).max(), pbar


@pytest.mark.parametrize("seed", range(5))
def test_lambda_max_gives_all_zero(seed):
    X, y = problem(seed + 20, n=40, p=4)
    s = en.class_weights(y)
    g, pbar = _weighted_null(X, y, s)
    C = 0.95 / g
    cfg = en.ElasticNetConfig(C=C, l1_ratio=1.0)
    res = en.fit(X, y, s, cfg)
    assert np.all(res.weights == 0.0)
    # subgradient condition at zero: |C * grad_j| <= alpha
    p = 1 / (1 + np.exp(-res.intercept))
    assert p == pytest.approx(pbar, abs=1e-6)
    assert np.all(np.abs(C * X.T @ (s * (p - y))) <= 1.0)
    assert en.kkt_check(X, y, s, res, cfg)[0]


@pytest.mark.parametrize("seed", range(5))
def test_smooth_gradient_central_differences(seed):
    rng = np.random.default_rng(seed)
    X, y = problem(seed, n=30, p=4)
    s = rng.uniform(0.5, 2.0, size=30)
    w, b = rng.normal(size=4), rng.normal()
    cfg = en.ElasticNetConfig(C=0.8, l1_ratio=0.3)
    gw, gb = en.smooth_gradient(X, y, s, w, b, cfg)
    theta = np.r_[w, b]
    h = 1e-6
    fd = np.empty(5)
    for j in range(5):
        e = np.zeros(5)
        e[j] = h
        fp = en_smooth(X, y, s, (theta + e)[:4], (theta + e)[4], 0.8, 0.3)
        fm = en_smooth(X, y, s, (theta - e)[:4], (theta - e)[4], 0.8, 0.3)
        fd[j] = (fp - fm) / (2 * h)
    g = np.r_[gw, gb]
    assert np.linalg.norm(g - fd) / np.linalg.norm(g) <= 1e-5


def test_objective_monotone_along_run():
    X, y = problem(4, p=5)
    res = en.fit(X, y, en.class_weights(y), en.ElasticNetConfig(C=1.0, l1_ratio=0.5))
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-12 * np.abs(h[:-1]))


def test_sparsity_increases_with_regularization():
    small, large = [], []
    for seed in range(20):
        X, y = problem(seed + 100, n=60, p=5)
        s = en.class_weights(y)
        small.append(np.count_nonzero(en.fit(X, y, s, en.ElasticNetConfig(C=0.001)).weights))
        large.append(np.count_nonzero(en.fit(X, y, s, en.ElasticNetConfig(C=1.0)).weights))
    assert np.mean(small) <= np.mean(large)


def test_fit_is_deterministic():
    X, y = problem(9, p=3)
    a = en.fit(X, y, en.class_weights(y))
    b = en.fit(X, y, en.class_weights(y))
    assert np.array_equal(a.weights, b.weights) and a.intercept == b.intercept


def test_fit_guards_and_edge_cases():
    X, y = problem(3)
    with pytest.raises(DegenerateLabelsError):
        en.fit(X, np.r_[1, np.zeros(49)].astype(int))
    with pytest.raises(ValueError):
        en.ElasticNetConfig(C=0.0)
    with pytest.raises(ValueError):
        en.ElasticNetConfig(l1_ratio=1.5)
    res = en.fit(np.zeros((50, 0)), y, en.class_weights(y))
    assert res.weights.shape == (0,) and res.converged
    assert abs(res.intercept) < 1e-6  # balanced weights centre the intercept-only model
    with pytest.warns(RuntimeWarning, match="standardized"):
        en.fit(X * 10 + 3, y)


def test_nonconvergence_is_flagged_not_fatal():
    X, y = problem(5, p=3)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = en.fit(X, y, None, en.ElasticNetConfig(C=1.0, max_iterations=2))
    assert not res.converged
    assert any("did not converge" in str(w.message) for w in caught)
