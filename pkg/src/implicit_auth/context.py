"""User-agnostic Stationary/Moving context detection with a random forest.

The forest is written from scratch: Gini-impurity CART trees grown on
bootstrap resamples, ``round(sqrt(n_features))`` candidate features per
split, hard majority vote.  Trees are stored as flat arrays for fast
traversal and serialised as nested JSON nodes.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .sensors import ValidationError

STATIONARY = "stationary"
MOVING = "moving"
CONTEXTS = (STATIONARY, MOVING)

SCHEMA_VERSION = "1.0"


@dataclass
class Tree:
    """Flat CART tree. ``left[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes)

    def leaf_for(self, x: Sequence[float]) -> int:
        node = 0
        left, right, feat, thr = self.left, self.right, self.feature, self.threshold
        while left[node] != -1:
            node = left[node] if x[feat[node]] <= thr[node] else right[node]
        return node

    def predict(self, x: Sequence[float]) -> int:
        return int(np.argmax(self.counts[self.leaf_for(x)]))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        active = self.left[node] != -1
        while active.any():
            n = node[active]
            go_left = X[rows[active], self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.left[node] != -1
        return np.argmax(self.counts[node], axis=1)

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def to_nested(self, node: int = 0) -> dict:
        if self.left[node] == -1:
            return {"counts": [int(c) for c in self.counts[node]]}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "counts": [int(c) for c in self.counts[node]],
            "left": self.to_nested(int(self.left[node])),
            "right": self.to_nested(int(self.right[node])),
        }

    @classmethod
    def from_nested(cls, root: dict) -> "Tree":
        feature, threshold, left, right, counts = [], [], [], [], []

        def visit(nd: dict) -> int:
            i = len(feature)
            feature.append(nd.get("feature", -1))
            threshold.append(nd.get("threshold", 0.0))
            left.append(-1)
            right.append(-1)
            counts.append(nd["counts"])
            if "left" in nd:
                left[i] = visit(nd["left"])
                right[i] = visit(nd["right"])
            return i

        visit(root)
        return cls(np.array(feature), np.array(threshold, dtype=float),
                   np.array(left), np.array(right), np.array(counts, dtype=float))


def _gini_best_split(X: np.ndarray, y: np.ndarray, n_classes: int, features: np.ndarray,
                     min_leaf: int) -> tuple[int, float, float] | None:
    """Best (feature, threshold, weighted impurity) over ``features``."""
    n = len(y)
    onehot = np.eye(n_classes)[y]
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        left_counts = np.cumsum(onehot[order], axis=0)[:-1]
        n_left = np.arange(1, n)
        right_counts = left_counts[-1] + onehot[order[-1]] - left_counts
        n_right = n - n_left
        valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        gini_l = 1.0 - np.sum(left_counts ** 2, axis=1) / n_left ** 2
        gini_r = 1.0 - np.sum(right_counts ** 2, axis=1) / n_right ** 2
        impurity = (n_left * gini_l + n_right * gini_r) / n
        impurity[~valid] = np.inf
        i = int(np.argmin(impurity))
        if best is None or impurity[i] < best[2] - 1e-15:
            best = (int(f), float(0.5 * (xs[i] + xs[i + 1])), float(impurity[i]))
    return best


def grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, rng: np.random.Generator,
              max_depth: int = 12, min_leaf: int = 2, max_features: int | None = None) -> Tree:
    n_features = X.shape[1]
    k = n_features if max_features is None else max(1, min(max_features, n_features))
    feature, threshold, left, right, counts = [], [], [], [], []
    stack = [(np.arange(len(y)), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        i = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = i
        c = np.bincount(y[idx], minlength=n_classes).astype(float)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(c)
        if depth >= max_depth or len(idx) < 2 * min_leaf or np.count_nonzero(c) < 2:
            continue
        cand = np.sort(rng.choice(n_features, size=k, replace=False))
        split = _gini_best_split(X[idx], y[idx], n_classes, cand, min_leaf)
        if split is None:
            continue
        f, thr, _ = split
        feature[i], threshold[i] = f, thr
        mask = X[idx, f] <= thr
        stack.append((idx[~mask], depth + 1, i, True))
        stack.append((idx[mask], depth + 1, i, False))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(counts))


@dataclass
class ForestModel:
    trees: list[Tree]
    classes: tuple[str, ...] = CONTEXTS
    n_features: int = 14
    max_depth: int = 12
    min_leaf: int = 2
    feature_subsample_count: int = 4
    seed: int = 0
    degenerate: bool = False

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def votes(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros((len(X), len(self.classes)))
        rows = np.arange(len(X))
        for tree in self.trees:
            out[rows, tree.predict_batch(X)] += 1
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class indices; ties resolve to the first class (Stationary)."""
        return np.argmax(self.votes(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "forest",
            "classes": list(self.classes),
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "feature_subsample_count": self.feature_subsample_count,
            "seed": self.seed,
            "degenerate": self.degenerate,
            "trees": [t.to_nested() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        check_schema(d)
        return cls([Tree.from_nested(t) for t in d["trees"]], tuple(d["classes"]), d["n_features"],
                   d["max_depth"], d["min_leaf"], d["feature_subsample_count"], d["seed"], d["degenerate"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ForestModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def check_schema(d: dict) -> None:
    major = int(str(d.get("schema_version", "0")).split(".")[0])
    if major > int(SCHEMA_VERSION.split(".")[0]):
        raise ValidationError(f"model schema {d.get('schema_version')} is newer than supported {SCHEMA_VERSION}")


def _encode_labels(labels: Sequence, classes: Sequence[str]) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([lookup[lab] if isinstance(lab, str) else int(lab) for lab in labels])
    except KeyError as exc:
        raise ValidationError(f"unknown label {exc}") from None


def train_forest(X: np.ndarray, labels: Sequence, n_trees: int = 100, max_depth: int = 12,
                 min_leaf: int = 2, max_features: int | None = None, seed: int = 0,
                 classes: Sequence[str] = CONTEXTS) -> ForestModel:
    """Fit a bootstrap forest; rows are put in canonical order first so the
    result depends only on the multiset of examples and the seed."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValidationError("training data must be a non-empty 2-D array")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite training features")
    y = _encode_labels(labels, classes)
    if len(y) != len(X):
        raise ValidationError("labels and rows differ in length")
    order = np.lexsort(tuple(X.T[::-1]) + (y,))
    X, y = X[order], y[order]

    n_features = X.shape[1]
    k = max_features or max(1, int(round(math.sqrt(n_features))))
    n_classes = len(classes)
    present = np.unique(y)
    if len(present) == 1:
        counts = np.bincount(y, minlength=n_classes).astype(float)[None, :]
        leaf = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), counts)
        return ForestModel([leaf] * n_trees, tuple(classes), n_features, max_depth, min_leaf, k, seed,
                           degenerate=True)

    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        boot = np.sort(rng.integers(0, len(y), size=len(y)))
        trees.append(grow_tree(X[boot], y[boot], n_classes, rng, max_depth, min_leaf, k))
    return ForestModel(trees, tuple(classes), n_features, max_depth, min_leaf, k, seed)


def detect(model: ForestModel, v) -> tuple[str, float]:
    """Majority-vote context and the winning vote fraction."""
    x = np.asarray(getattr(v, "values", v), dtype=float).reshape(-1)
    if len(x) != model.n_features:
        raise ValidationError(f"expected a {model.n_features}-dim vector, got {len(x)}")
    votes = [0] * len(model.classes)
    for tree in model.trees:
        votes[tree.predict(x)] += 1
    best = max(range(len(votes)), key=lambda i: (votes[i], -i))
    return model.classes[best], votes[best] / model.n_trees


# -- confusion matrix -------------------------------------------------------

def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted
    classes: tuple[str, ...] = CONTEXTS

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def rates(self) -> np.ndarray:
        tot = self.totals[:, None]
        return np.divide(self.counts, tot, out=np.zeros_like(self.counts, dtype=float), where=tot > 0)

    def per_class_accuracy(self) -> dict[str, float]:
        r = self.rates()
        return {c: float(r[i, i]) for i, c in enumerate(self.classes)}

    def intervals(self) -> dict[str, tuple[float, float]]:
        return {c: wilson_interval(int(self.counts[i, i]), int(self.totals[i]))
                for i, c in enumerate(self.classes)}

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.astype(int).tolist(),
                "per_class_accuracy": self.per_class_accuracy(),
                "wilson95": {k: list(v) for k, v in self.intervals().items()}}


def confusion(model: ForestModel, X: np.ndarray, labels: Sequence) -> ConfusionMatrix:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) == 0:
        raise ValidationError("empty test set")
    y = _encode_labels(labels, model.classes)
    pred = model.predict(X)
    k = len(model.classes)
    counts = np.zeros((k, k))
    np.add.at(counts, (y, pred), 1)
    return ConfusionMatrix(counts, model.classes)


def timed_detect(model: ForestModel, v) -> tuple[str, float, float]:
    t0 = time.perf_counter()
    label, frac = detect(model, v)
    return label, frac, time.perf_counter() - t0
