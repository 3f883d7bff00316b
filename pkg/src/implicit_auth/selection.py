"""Offline feature-selection analysis.

Three tools: a Fisher score to rank sensors/features by class separation, a
two-sample Kolmogorov-Smirnov screen that flags features which fail to tell
users apart, and Pearson-correlation pruning of redundant features.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import kolmogorov

from .sensors import ValidationError


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = 0.05
    corr_threshold: float = 0.85
    drop_rule: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if not 0 < self.corr_threshold <= 1:
            raise ValidationError("corr_threshold must lie in (0, 1]")
        if not 0 <= self.drop_rule < 1:
            raise ValidationError("drop_rule must lie in [0, 1)")


@dataclass
class LabeledFeatureSet:
    """Per-user feature matrices; ``features`` names the columns."""

    per_user: dict[str, np.ndarray]
    features: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.per_user) < 2:
            raise ValidationError("need at least 2 users")
        for user, m in self.per_user.items():
            m = np.asarray(m, dtype=float)
            if m.ndim == 1:
                m = m[:, None]
            if m.shape[0] < 2 or m.shape[1] != len(self.features):
                raise ValidationError(f"user {user!r}: bad matrix shape {m.shape}")
            self.per_user[user] = m

    def column(self, feature: str) -> dict[str, np.ndarray]:
        j = self.features.index(feature)
        return {u: m[:, j] for u, m in self.per_user.items()}


def fisher_score(groups: Mapping | Sequence) -> float:
    """Between-class over within-class scatter of a scalar feature.

    ``groups`` maps class -> samples (or is a sequence of sample arrays).
    Returns ``inf`` when every within-class variance is zero but means differ.
    """
    arrays = [np.asarray(g, dtype=float).reshape(-1)
              for g in (groups.values() if isinstance(groups, Mapping) else groups)]
    if len(arrays) < 2 or any(a.size < 2 for a in arrays):
        raise ValidationError("fisher_score needs >= 2 classes with >= 2 samples each")
    mu = np.concatenate(arrays).mean()
    between = sum(a.size * (a.mean() - mu) ** 2 for a in arrays)
    within = sum(a.size * a.var() for a in arrays)
    if within == 0:
        return 0.0 if between == 0 else math.inf
    return float(between / within)


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sample KS statistic ``D`` and asymptotic p-value.

    The p-value is the limiting Kolmogorov survival function at
    ``sqrt(en) * D`` with ``en = na*nb/(na+nb)``.  Without a small-sample
    correction it tracks the permutation value ``P(D' >= D)`` to about 0.02
    at n = 50, since that tail includes the atom at ``D`` itself.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size < 2 or b.size < 2:
        raise ValidationError("ks_two_sample needs >= 2 values per sample")
    d = ks_statistic(a, b)
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    p = float(kolmogorov(en * d)) if d > 0 else 1.0
    return d, min(1.0, max(0.0, p))


def pairwise_ks_pvalues(per_user: Mapping[str, Sequence[float]]) -> np.ndarray:
    users = sorted(per_user)
    return np.array([ks_two_sample(per_user[u], per_user[v])[1]
                     for u, v in itertools.combinations(users, 2)])


def ks_feature_screen(pvalues: Mapping[str, Sequence[float]],
                      config: SelectionConfig = SelectionConfig()) -> dict[str, bool]:
    """Keep (True) or drop (False) each feature from its pairwise p-values.

    A feature is dropped when strictly more than ``drop_rule`` of its pairs
    are non-significant (p > alpha).
    """
    verdict = {}
    for name, ps in pvalues.items():
        ps = np.asarray(ps, dtype=float)
        frac = float(np.mean(ps > config.alpha)) if ps.size else 1.0
        verdict[name] = not frac > config.drop_rule
    return verdict


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size != b.size or a.size < 2:
        raise ValidationError("pearson needs equal-length inputs of size >= 2")
    da, db = a - a.mean(), b - b.mean()
    na, nb = math.sqrt(da @ da), math.sqrt(db @ db)
    if na == 0 or nb == 0:
        raise ValidationError("correlation undefined for a constant input")
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def correlation_matrix(m: np.ndarray, undefined: float | None = None) -> np.ndarray:
    """Pairwise Pearson matrix of the columns of ``m``.

    A constant column raises unless ``undefined`` is given, in which case
    its pairs are filled with that value.
    """
    m = np.asarray(m, dtype=float)
    k = m.shape[1]
    out = np.eye(k)
    for i, j in itertools.combinations(range(k), 2):
        try:
            out[i, j] = out[j, i] = pearson(m[:, i], m[:, j])
        except ValidationError:
            if undefined is None:
                raise
            out[i, j] = out[j, i] = undefined
    return out


def mean_correlation(fs: LabeledFeatureSet) -> np.ndarray:
    """Feature-by-feature Pearson matrix averaged over users.

    Users for whom a feature is constant do not contribute to its pairs; a
    pair with no defined correlation for any user is reported as 0.
    """
    mats = np.array([correlation_matrix(m, undefined=np.nan) for _, m in sorted(fs.per_user.items())])
    defined = ~np.isnan(mats)
    total = np.where(defined, mats, 0.0).sum(axis=0)
    count = defined.sum(axis=0)
    return np.divide(total, count, out=np.zeros_like(total), where=count > 0)


def redundancy_prune(corr: np.ndarray, names: Sequence[str],
                     config: SelectionConfig = SelectionConfig()) -> list[str]:
    """Greedy removal of one member of every highly correlated pair.

    Pairs are visited by decreasing |r| (ties by index).  From each pair still
    fully present, the member with larger mean |r| to the other features is
    dropped; on a tie, the later-listed feature goes.
    """
    corr = np.asarray(corr, dtype=float)
    k = len(names)
    if corr.shape != (k, k) or not np.allclose(corr, corr.T):
        raise ValidationError("correlation matrix must be square and symmetric")
    absr = np.abs(corr)
    off = absr.copy()
    np.fill_diagonal(off, 0.0)
    mean_abs = off.sum(axis=1) / max(k - 1, 1)
    pairs = [(i, j) for i, j in itertools.combinations(range(k), 2)
             if absr[i, j] >= config.corr_threshold]
    pairs.sort(key=lambda p: (-absr[p], p))
    dropped: list[int] = []
    for i, j in pairs:
        if i in dropped or j in dropped:
            continue
        dropped.append(j if mean_abs[j] >= mean_abs[i] else i)
    return [names[i] for i in sorted(dropped)]


def selection_report(fs: LabeledFeatureSet, config: SelectionConfig = SelectionConfig()) -> dict:
    """Fisher scores, KS p-value quartiles, mean correlations and the kept list."""
    fisher, quartiles, pvals = {}, {}, {}
    for name in fs.features:
        col = fs.column(name)
        fisher[name] = fisher_score(col)
        ps = pairwise_ks_pvalues(col)
        pvals[name] = ps
        q1, med, q3 = np.percentile(ps, [25, 50, 75])
        quartiles[name] = {"q1": float(q1), "median": float(med), "q3": float(q3)}
    screen = ks_feature_screen(pvals, config)
    survivors = [f for f in fs.features if screen[f]]
    corr = mean_correlation(fs) if len(survivors) >= 2 else np.eye(len(fs.features))
    idx = [fs.features.index(f) for f in survivors]
    redundant = redundancy_prune(corr[np.ix_(idx, idx)], survivors, config) if len(idx) >= 2 else []
    return {
        "fisher": fisher,
        "ks_pvalue_quartiles": quartiles,
        "ks_dropped": [f for f in fs.features if not screen[f]],
        "correlation": {"features": list(fs.features), "matrix": corr.tolist()},
        "redundant_dropped": redundant,
        "kept": [f for f in survivors if f not in redundant],
        "config": {"alpha": config.alpha, "corr_threshold": config.corr_threshold,
                   "drop_rule": config.drop_rule},
    }
