"""Closed-form kernel ridge regression authenticator (identity kernel).

Two solvers give the same weights:

* dual:   w = X (X^T X + rho I_N)^-1 y     -- an N x N system
* primal: w = (X X^T + rho I_M)^-1 X y     -- an M x M system

with ``X`` the ``M x N`` matrix whose columns are training vectors and
``y`` in {+1, -1}.  The primal path costs O(M^2 N + M^3), so with M = 28 it
stays cheap however many windows are enrolled.  Both use a Cholesky solve.

The confidence score of a window is ``x^T w`` on z-scored features; a
window is accepted when the score is strictly above the threshold.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .context import check_schema, SCHEMA_VERSION
from .features import Slot
from .sensors import ValidationError

ACCEPT = "accept"
REJECT = "reject"


@dataclass(eq=False)
class TrainingSet:
    """``X`` is M x N (one column per window), ``y`` holds +1/-1 labels."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.y):
            raise ValidationError(f"X must be M x N with N = len(y); got {self.X.shape} and {len(self.y)}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValidationError("non-finite training data")

    @classmethod
    def from_rows(cls, rows: np.ndarray, y: Sequence[float]) -> "TrainingSet":
        return cls(np.asarray(rows, dtype=float).T, y)

    @property
    def M(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]


def _check(X: np.ndarray, y: np.ndarray, rho: float) -> None:
    if not rho > 0:
        raise ValidationError("rho must be > 0")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite training data")
    if X.shape[1] != len(y):
        raise ValidationError("X columns and y length differ")


def solve_primal(X: np.ndarray, y: np.ndarray, rho: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    _check(X, y, rho)
    A = X @ X.T
    A[np.diag_indices_from(A)] += rho
    return cho_solve(cho_factor(A, lower=True), X @ y)


def solve_dual(X: np.ndarray, y: np.ndarray, rho: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    _check(X, y, rho)
    K = X.T @ X
    K[np.diag_indices_from(K)] += rho
    return X @ cho_solve(cho_factor(K, lower=True), y)


def objective(X: np.ndarray, y: np.ndarray, w: np.ndarray, rho: float) -> float:
    r = X.T @ w - y
    return float(rho * (w @ w) + r @ r)


def objective_gradient(X: np.ndarray, y: np.ndarray, w: np.ndarray, rho: float) -> np.ndarray:
    return 2 * rho * w + 2 * X @ (X.T @ w - y)


@dataclass(eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        """Per-feature statistics of an M x N matrix; zero spread maps to scale 1."""
        mean = X.mean(axis=1)
        std = X.std(axis=1)
        return cls(mean, np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls, m: int) -> "Standardizer":
        return cls(np.zeros(m), np.ones(m))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Standardise columns of an M x N matrix or a single M-vector."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return (X - self.mean) / self.scale
        return (X - self.mean[:, None]) / self.scale[:, None]


@dataclass(eq=False)
class AuthModel:
    w: np.ndarray
    rho: float
    context: str | None
    layout: tuple[Slot, ...]
    norm: Standardizer
    train_meta: dict = field(default_factory=dict)
    threshold: float = 0.0

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=float)
        if not self.rho > 0:
            raise ValidationError("rho must be > 0")
        if len(self.w) != len(self.layout):
            raise ValidationError("weight vector and layout lengths differ")
        if not np.all(np.isfinite(self.w)):
            raise ValidationError("non-finite weights")

    @property
    def M(self) -> int:
        return len(self.w)

    def scores(self, rows: np.ndarray) -> np.ndarray:
        """Confidence scores for an ``(n, M)`` array of raw feature rows."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != self.M:
            raise ValidationError(f"expected {self.M} features, got {rows.shape[1]}")
        return ((rows - self.norm.mean) / self.norm.scale) @ self.w

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "krr",
            "w": self.w.tolist(),
            "rho": self.rho,
            "context": self.context,
            "layout": [s.name for s in self.layout],
            "norm_mean": self.norm.mean.tolist(),
            "norm_scale": self.norm.scale.tolist(),
            "threshold": self.threshold,
            "train_meta": self.train_meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuthModel":
        check_schema(d)
        layout = tuple(Slot(*name.split("_", 2)) for name in d["layout"])
        return cls(np.array(d["w"]), d["rho"], d["context"], layout,
                   Standardizer(np.array(d["norm_mean"]), np.array(d["norm_scale"])),
                   d.get("train_meta", {}), d.get("threshold", 0.0))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AuthModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _train(ts: TrainingSet, rho: float, solver: str, context: str | None,
           layout: Sequence[Slot] | None, standardize: bool) -> AuthModel:
    if not rho > 0:
        raise ValidationError("rho must be > 0")
    labels = set(np.unique(ts.y).tolist())
    if not labels <= {-1.0, 1.0} or len(labels) < 2 or ts.N < 2:
        raise ValidationError("training needs N >= 2 with both +1 and -1 labels")
    norm = Standardizer.fit(ts.X) if standardize else Standardizer.identity(ts.M)
    Z = norm.apply(ts.X)
    t0 = time.perf_counter()
    w = solve_primal(Z, ts.y, rho) if solver == "primal" else solve_dual(Z, ts.y, rho)
    elapsed = time.perf_counter() - t0
    if layout is None:
        layout = tuple(Slot("x", "f", str(i)) for i in range(ts.M))
    meta = {"N": ts.N, "solver": solver, "solve_seconds": elapsed,
            "trained_at": datetime.now(timezone.utc).isoformat()}
    return AuthModel(w, rho, context, tuple(layout), norm, meta)


def train_primal(ts: TrainingSet, rho: float = 1.0, context: str | None = None,
                 layout: Sequence[Slot] | None = None, standardize: bool = True) -> AuthModel:
    return _train(ts, rho, "primal", context, layout, standardize)


def train_dual(ts: TrainingSet, rho: float = 1.0, context: str | None = None,
               layout: Sequence[Slot] | None = None, standardize: bool = True) -> AuthModel:
    return _train(ts, rho, "dual", context, layout, standardize)


def score(model, x) -> float:
    """Confidence score ``x^T w`` of one feature vector after normalisation."""
    vals = getattr(x, "values", x)
    layout = getattr(x, "layout", None)
    if layout is not None and hasattr(model, "layout") and tuple(layout) != tuple(model.layout):
        raise ValidationError("feature layout does not match the model")
    vals = np.asarray(vals, dtype=float).reshape(-1)
    cs = float(model.scores(vals[None, :])[0])
    if not np.isfinite(cs):
        raise ValidationError("non-finite confidence score")
    return cs


def classify(model, x, threshold: float = 0.0) -> str:
    return ACCEPT if score(model, x) > threshold else REJECT


# -- baselines --------------------------------------------------------------

@dataclass(eq=False)
class LinearRegressionModel:
    """Unregularised least squares (minimum-norm solution), same scoring as KRR."""

    w: np.ndarray
    norm: Standardizer

    def scores(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        return ((rows - self.norm.mean) / self.norm.scale) @ self.w


@dataclass(eq=False)
class GaussianNBModel:
    """Two-class Gaussian naive Bayes; the score is the log posterior ratio."""

    means: np.ndarray  # (2, M): row 0 legitimate, row 1 impostor
    variances: np.ndarray
    log_priors: np.ndarray

    def scores(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        ll = []
        for c in range(2):
            d = rows - self.means[c]
            ll.append(self.log_priors[c] - 0.5 * np.sum(np.log(2 * np.pi * self.variances[c]) + d * d / self.variances[c], axis=1))
        return ll[0] - ll[1]


VAR_FLOOR = 1e-9


def train_baseline(kind: str, ts: TrainingSet, standardize: bool = True):
    labels = set(np.unique(ts.y).tolist())
    if not labels <= {-1.0, 1.0} or len(labels) < 2:
        raise ValidationError("baseline training needs both +1 and -1 labels")
    if kind == "linear_regression":
        norm = Standardizer.fit(ts.X) if standardize else Standardizer.identity(ts.M)
        w, *_ = np.linalg.lstsq(norm.apply(ts.X).T, ts.y, rcond=None)
        return LinearRegressionModel(w, norm)
    if kind == "naive_bayes":
        rows = ts.X.T
        groups = [rows[ts.y > 0], rows[ts.y < 0]]
        means = np.array([g.mean(axis=0) for g in groups])
        variances = np.array([g.var(axis=0) for g in groups])
        if np.any(variances < VAR_FLOOR):
            warnings.warn("degenerate feature variance floored at 1e-9", RuntimeWarning, stacklevel=2)
            variances = np.maximum(variances, VAR_FLOOR)
        priors = np.log(np.array([len(g) for g in groups], dtype=float) / ts.N)
        return GaussianNBModel(means, variances, priors)
    raise ValidationError(f"unknown baseline {kind!r}")


def train_krr_rows(rows: np.ndarray, y: np.ndarray, rho: float = 1.0) -> AuthModel:
    """Convenience for row-major data (evaluation code)."""
    return train_primal(TrainingSet.from_rows(rows, y), rho)
