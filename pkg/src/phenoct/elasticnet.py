"""Weighted elastic-net logistic regression.

Minimises

    J(w, b) = a*|w|_1 + (1 - a)/2 * |w|_2^2
              + C * sum_i s_i * [-y_i log p_i - (1 - y_i) log(1 - p_i)]

with ``p = sigmoid(Xw + b)`` and the intercept unpenalised, so a smaller
``C`` means stronger regularisation. The solver is accelerated proximal
gradient (FISTA) with backtracking and a restart whenever an extrapolated
step would increase the objective, which keeps accepted iterates monotone.
Everything starts from zero and uses no randomness.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DegenerateLabelsError

log = logging.getLogger(__name__)

KKT_TOL = 1e-4


@dataclass(frozen=True)
class ElasticNetConfig:
    C: float = 0.1
    l1_ratio: float = 0.5
    max_iterations: int = 10_000
    tolerance: float = 1e-7
    kkt_tolerance: float = KKT_TOL

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not 0.0 <= self.l1_ratio <= 1.0:
            raise ValueError(f"l1_ratio must lie in [0, 1], got {self.l1_ratio}")


@dataclass(frozen=True)
class FitResult:
    weights: np.ndarray
    intercept: float
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    history: tuple = field(default=(), repr=False, compare=False)


def class_weights(labels) -> np.ndarray:
    """Balanced weights ``n / (2 * n_class)`` per sample."""
    y = np.asarray(labels).astype(int)
    n = y.size
    n_pos = int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError()
    return np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _log1pexp(z):
    # log(1 + exp(z)) without overflow
    return np.logaddexp(0.0, z)


def _loss(X, y, s, w, b):
    z = X @ w + b
    # -y log p - (1-y) log(1-p) = log(1+e^z) - y z
    return float(np.dot(s, _log1pexp(z) - y * z))


def _smooth(X, y, s, w, b, C, alpha):
    return C * _loss(X, y, s, w, b) + 0.5 * (1.0 - alpha) * float(np.dot(w, w))


def _smooth_grad(X, y, s, w, b, C, alpha):
    r = s * (expit(X @ w + b) - y)
    return C * (X.T @ r) + (1.0 - alpha) * w, C * float(r.sum())


def objective(X, y, s, w, b, config: ElasticNetConfig) -> float:
    X, y, s, w = _prep(X, y, s, w)
    a = config.l1_ratio
    return a * float(np.abs(w).sum()) + _smooth(X, y, s, w, float(b), config.C, a)


def smooth_gradient(X, y, s, w, b, config: ElasticNetConfig):
    """Gradient of the differentiable part (log-loss plus ridge) in (w, b)."""
    X, y, s, w = _prep(X, y, s, w)
    return _smooth_grad(X, y, s, w, float(b), config.C, config.l1_ratio)


def _prep(X, y, s, w=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    y = np.asarray(y, dtype=np.float64).ravel()
    s = np.ones_like(y) if s is None else np.asarray(s, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0] or s.shape != y.shape:
        raise ValueError("X, y and sample weights disagree in length")
    if w is not None:
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.shape[0] != X.shape[1]:
            raise ValueError("weight vector length does not match X")
    return X, y, s, w


def kkt_residual(X, y, s, w, b, config: ElasticNetConfig) -> float:
    """Largest violation of the optimality conditions at (w, b)."""
    X, y, s, w = _prep(X, y, s, w)
    a = config.l1_ratio
    gw, gb = _smooth_grad(X, y, s, w, float(b), config.C, a)
    nz = w != 0
    viol = np.where(nz, np.abs(gw + a * np.sign(w)), np.maximum(np.abs(gw) - a, 0.0))
    return max(float(viol.max()) if viol.size else 0.0, abs(gb))


def kkt_check(X, y, s, fit: FitResult, config: ElasticNetConfig, tol: float = KKT_TOL):
    res = kkt_residual(X, y, s, fit.weights, fit.intercept, config)
    return res <= tol, res


def predict_proba(X, weights, intercept) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return expit(X @ np.asarray(weights, dtype=np.float64) + float(intercept))


def _check_standardized(X):
    if X.shape[0] < 2:
        return
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    bad = (np.abs(mu) > 1e-6) | (((sd < 0.99) | (sd > 1.01)) & (sd > 0))
    if bad.any():
        warnings.warn(f"{int(bad.sum())} column(s) of X do not look standardized",
                      RuntimeWarning, stacklevel=3)


def fit(X, y, sample_weights=None, config: ElasticNetConfig = ElasticNetConfig(),
        check_standardized: bool = True) -> FitResult:
    X, y, s, _ = _prep(X, y, sample_weights)
    n_pos = int((y == 1).sum())
    if n_pos < 2 or y.size - n_pos < 2:
        raise DegenerateLabelsError("need at least two cases of each class")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if check_standardized:
        _check_standardized(X)

    C, a = config.C, config.l1_ratio
    n, p = X.shape
    # Lipschitz bound of the smooth gradient in (w, b): C/4 |diag(s)^.5 [X 1]|^2 + ridge
    Xa = np.hstack([X, np.ones((n, 1))]) * np.sqrt(s)[:, None]
    L = 0.25 * C * float(np.linalg.norm(Xa, 2) ** 2) + (1.0 - a)
    L = max(L, 1e-12)

    w = np.zeros(p)
    b = 0.0
    f_cur = _smooth(X, y, s, w, b, C, a)
    obj = f_cur + a * float(np.abs(w).sum())
    history = [obj]
    yw, yb, t = w.copy(), b, 1.0
    converged = False
    it = 0
    kkt = math.inf
    for it in range(1, config.max_iterations + 1):
        f_y = _smooth(X, y, s, yw, yb, C, a)
        gw, gb = _smooth_grad(X, y, s, yw, yb, C, a)
        while True:
            nw = soft_threshold(yw - gw / L, a / L)
            nb = yb - gb / L
            dw, db = nw - yw, nb - yb
            f_new = _smooth(X, y, s, nw, nb, C, a)
            bound = f_y + float(np.dot(gw, dw)) + gb * db + 0.5 * L * (float(np.dot(dw, dw)) + db * db)
            if f_new <= bound + 1e-12 * max(1.0, abs(f_y)):
                break
            L *= 2.0
        new_obj = f_new + a * float(np.abs(nw).sum())
        if new_obj > obj:
            if t == 1.0:
                # plain proximal step from the accepted iterate cannot increase J;
                # reaching here means rounding noise at the optimum
                new_obj, nw, nb = obj, w, b
            else:
                yw, yb, t = w.copy(), b, 1.0
                continue
        rel = abs(obj - new_obj) / max(abs(obj), 1e-300)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        yw = nw + ((t - 1.0) / t_next) * (nw - w)
        yb = nb + ((t - 1.0) / t_next) * (nb - b)
        w, b, obj, t = nw, nb, new_obj, t_next
        history.append(obj)
        if rel < config.tolerance:
            kkt = kkt_residual(X, y, s, w, b, config)
            if kkt <= config.kkt_tolerance:
                converged = True
                break
    if not converged:
        kkt = kkt_residual(X, y, s, w, b, config)
        warnings.warn(f"elastic net did not converge in {it} iterations "
                      f"(KKT residual {kkt:.3g})", RuntimeWarning, stacklevel=2)
    return FitResult(w, float(b), obj, it, converged, kkt, tuple(history))
