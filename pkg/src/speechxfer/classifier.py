"""Feature standardization and a one-vs-rest linear SVM.

Each binary problem is solved in the dual by coordinate descent over the
training examples (one exact clipped Newton step per coordinate, examples
visited in a fresh random order every sweep).  The intercept is handled by
appending a constant feature, so the dual has only box constraints and
single-coordinate steps are feasible.  Training stops once the duality gap
falls below ``tol * (1 + |primal|)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import InputError, derive_rng

STD_FLOOR = 1e-12
MAX_SWEEPS = 200_000
# sweep orders are drawn this many at a time; part of the RNG contract
SWEEP_BATCH = 8


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_features:
            raise InputError(
                f"feature dimension {x.shape[-1]} does not match scaler dimension {self.n_features}"
            )
        return (x - self.mean) / self.std

    def __eq__(self, other):
        if not isinstance(other, FeatureScaler):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)


def fit_scaler(features: np.ndarray) -> FeatureScaler:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError(f"need a 2-D feature matrix with >= 2 rows, got shape {x.shape}")
    mean = x.mean(axis=0)
    constant = np.ptp(x, axis=0) == 0
    # exact centre for constant columns so they scale to exact zeros
    mean[constant] = x[0, constant]
    std = np.maximum(x.std(axis=0, ddof=1), STD_FLOOR)
    mean.setflags(write=False)
    std.setflags(write=False)
    return FeatureScaler(mean, std)


def apply_scaler(scaler: FeatureScaler, x: np.ndarray) -> np.ndarray:
    return scaler.transform(x)


@numba.njit(cache=True, nogil=True)
def _sweep(x, y, alpha, w, qii, order, c):
    for t in range(order.shape[0]):
        i = order[t]
        g = 0.0
        for j in range(x.shape[1]):
            g += w[j] * x[i, j]
        g = y[i] * g - 1.0
        a = alpha[i]
        if a == 0.0:
            pg = min(g, 0.0)
        elif a == c:
            pg = max(g, 0.0)
        else:
            pg = g
        if pg != 0.0:
            a_new = min(max(a - g / qii[i], 0.0), c)
            step = (a_new - a) * y[i]
            if step != 0.0:
                for j in range(x.shape[1]):
                    w[j] += step * x[i, j]
            alpha[i] = a_new


@numba.njit(cache=True, nogil=True)
def _objectives(x, y, alpha, w, c):
    ww = 0.0
    for j in range(w.shape[0]):
        ww += w[j] * w[j]
    hinge = 0.0
    asum = 0.0
    for i in range(x.shape[0]):
        m = 0.0
        for j in range(x.shape[1]):
            m += w[j] * x[i, j]
        m = 1.0 - y[i] * m
        if m > 0.0:
            hinge += m
        asum += alpha[i]
    return 0.5 * ww + c * hinge, asum - 0.5 * ww


@numba.njit(cache=True, nogil=True)
def _run_sweeps(x, y, alpha, w, qii, orders, c, tol, duals):
    # one sweep per row of ``orders``; stops early once the gap criterion holds
    primal, dual = _objectives(x, y, alpha, w, c)
    for s in range(orders.shape[0]):
        _sweep(x, y, alpha, w, qii, orders[s], c)
        primal, dual = _objectives(x, y, alpha, w, c)
        duals[s] = dual
        if primal - dual <= tol * (1.0 + abs(primal)):
            return s + 1, primal, dual
    return orders.shape[0], primal, dual


def _free_set_step(x, y, alpha, w, c) -> bool:
    """Exact line search toward the dual maximizer on the current free face.

    Coordinates strictly inside (0, C) move along the direction to the
    least-squares solution of their stationarity equations, the rest stay
    put.  The step length is the exact maximizer of the concave dual along
    that direction, truncated at the box, so the dual never decreases.
    """
    free = np.flatnonzero((alpha > 0.0) & (alpha < c))
    if free.size == 0:
        return False
    z = y[free, None] * x[free]
    w_fixed = w - z.T @ alpha[free]
    # min-norm solution of (Z Z^T) a = 1 - Z w_fixed through the thin SVD of Z
    u, sv, _ = np.linalg.svd(z, full_matrices=False)
    keep = sv > sv[0] * max(z.shape) * np.finfo(float).eps
    u, sv = u[:, keep], sv[keep]
    target = u @ ((u.T @ (1.0 - z @ w_fixed)) / sv**2)
    delta = target - alpha[free]
    grad = 1.0 - z @ w
    slope = float(grad @ delta)
    zd = z.T @ delta
    curvature = float(zd @ zd)
    if not slope > 0.0 or not curvature > 0.0:
        return False
    t = slope / curvature
    with np.errstate(divide="ignore", invalid="ignore"):
        room = np.where(delta > 0, (c - alpha[free]) / delta,
                        np.where(delta < 0, -alpha[free] / delta, np.inf))
    t = min(t, float(room.min()))
    if not t > 0.0:
        return False
    new = np.clip(alpha[free] + t * delta, 0.0, c)
    w += z.T @ (new - alpha[free])
    alpha[free] = new
    return True


@dataclass(frozen=True)
class BinarySolution:
    w: np.ndarray
    b: float
    alpha: np.ndarray
    primal: float
    dual: float
    gap: float
    sweeps: int
    dual_history: np.ndarray = field(repr=False)


def train_binary_svm(x: np.ndarray, y: np.ndarray, c: float, tol: float, rng: np.random.Generator, max_sweeps: int = MAX_SWEEPS) -> BinarySolution:
    """Dual coordinate descent for one +/-1 problem (intercept as extra feature)."""
    n = x.shape[0]
    xa = np.ascontiguousarray(np.hstack([x, np.ones((n, 1))]))
    ya = np.asarray(y, dtype=np.float64)
    alpha = np.zeros(n)
    w = np.zeros(xa.shape[1])
    qii = np.einsum("ij,ij->i", xa, xa)
    history = []
    primal, dual = _objectives(xa, ya, alpha, w, c)
    gap = primal - dual
    sweeps = 0
    while gap > tol * (1.0 + abs(primal)) and sweeps < max_sweeps:
        batch = min(SWEEP_BATCH, max_sweeps - sweeps)
        orders = rng.permuted(np.broadcast_to(np.arange(n), (batch, n)), axis=1)
        duals = np.empty(batch)
        used, primal, dual = _run_sweeps(xa, ya, alpha, w, qii, orders, c, tol, duals)
        history.append(duals[:used])
        sweeps += used
        gap = primal - dual
        if gap > tol * (1.0 + abs(primal)) and _free_set_step(xa, ya, alpha, w, c):
            primal, dual = _objectives(xa, ya, alpha, w, c)
            history.append(np.array([dual]))
            gap = primal - dual
    if gap > tol * (1.0 + abs(primal)):
        warnings.warn(
            f"dual coordinate descent stopped after {sweeps} sweeps with gap {gap:.3e}",
            ConvergenceWarning,
        )
    return BinarySolution(
        w=w[:-1].copy(), b=float(w[-1]), alpha=alpha, primal=float(primal),
        dual=float(dual), gap=float(gap), sweeps=sweeps, dual_history=np.concatenate(history) if history else np.empty(0),
    )


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    """K one-vs-rest linear scorers: ``score_c(x) = weights[c] @ x + biases[c]``."""

    weights: np.ndarray
    biases: np.ndarray
    c: float
    tol: float
    gaps: np.ndarray
    primal: np.ndarray
    sweeps: tuple
    dual_history: tuple = field(repr=False, default=())

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_features:
            raise InputError(
                f"feature dimension {x.shape[-1]} does not match classifier dimension {self.n_features}"
            )
        return x @ self.weights.T + self.biases

    def __eq__(self, other):
        if not isinstance(other, LinearClassifier):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.biases, other.biases)
            and self.c == other.c
            and self.tol == other.tol
        )


def train_ovr_svm(features: np.ndarray, labels, c: float = 1.0, tol: float = 1e-6, rng=None, *, seed: int = 0, stream: str = "") -> LinearClassifier:
    """Fit one binary SVM per class (class c = +1, all others = -1).

    With ``rng`` given, all K problems draw their sweep orders from it in
    class order.  Otherwise each class ``c`` uses its own stream
    ``derive_rng(seed, f"{stream}svm-class-{c}")``, which makes the result
    independent of the order the problems are solved in.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise InputError(f"features {x.shape} and labels {labels.shape} disagree")
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite features")
    if not c > 0 or not tol > 0:
        raise InputError(f"C and tol must be positive, got C={c}, tol={tol}")
    k = int(labels.max()) + 1
    missing = sorted(set(range(k)) - set(labels.tolist()))
    if missing or labels.min() < 0:
        raise InputError(f"every class must be present; missing {missing}")
    sols = []
    for cls in range(k):
        gen = rng if rng is not None else derive_rng(seed, f"{stream}svm-class-{cls}")
        y = np.where(labels == cls, 1.0, -1.0)
        sols.append(train_binary_svm(x, y, c, tol, gen))
    return LinearClassifier(
        weights=np.stack([s.w for s in sols]),
        biases=np.array([s.b for s in sols]),
        c=float(c),
        tol=float(tol),
        gaps=np.array([s.gap for s in sols]),
        primal=np.array([s.primal for s in sols]),
        sweeps=tuple(s.sweeps for s in sols),
        dual_history=tuple(s.dual_history for s in sols),
    )


def predict(classifier: LinearClassifier, scaler: FeatureScaler, x: np.ndarray):
    """Argmax of the one-vs-rest scores; exact ties go to the lowest class.

    Accepts a single feature vector (returns an int) or a matrix of them.
    """
    x = np.asarray(x, dtype=np.float64)
    if scaler.n_features != classifier.n_features:
        raise InputError("scaler and classifier dimensions differ")
    scores = classifier.decision_function(scaler.transform(x))
    out = np.argmax(scores, axis=-1)
    return int(out) if out.ndim == 0 else out
