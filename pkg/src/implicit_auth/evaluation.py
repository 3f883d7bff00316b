"""Desk-scale evaluation: cross-validated FRR/FAR/accuracy, ablations,
parameter sweeps and masquerade (mimicry) survival curves.

FRR is the fraction of legitimate windows rejected, FAR the fraction of
impostor windows accepted.  Counts are pooled over folds, iterations and
victims before rates are taken, so ``accuracy`` always agrees with the raw
counts.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .context import CONTEXTS, ForestModel, train_forest, wilson_interval
from .dataset import DEVICE_SETS, PHONE_AND_WATCH, PHONE_ONLY, FeatureDataset, victim_split
from .krr import TrainingSet, train_baseline, train_primal
from .sensors import ValidationError

CONTEXT_FREE = "context-free"
CONTEXT_AWARE = "context-aware"
CONTEXT_MODES = (CONTEXT_FREE, CONTEXT_AWARE)


@dataclass
class Counts:
    tp: int = 0  # legitimate accepted
    fn: int = 0  # legitimate rejected
    tn: int = 0  # impostor rejected
    fp: int = 0  # impostor accepted

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fn + other.fn, self.tn + other.tn, self.fp + other.fp)

    @property
    def n_legit(self) -> int:
        return self.tp + self.fn

    @property
    def n_impostor(self) -> int:
        return self.tn + self.fp

    @property
    def frr(self) -> float:
        return self.fn / self.n_legit if self.n_legit else 0.0

    @property
    def far(self) -> float:
        return self.fp / self.n_impostor if self.n_impostor else 0.0

    @property
    def accuracy(self) -> float:
        total = self.n_legit + self.n_impostor
        return (self.tp + self.tn) / total if total else 0.0

    @classmethod
    def from_verdicts(cls, y: np.ndarray, accepted: np.ndarray) -> "Counts":
        legit = y > 0
        return cls(int(np.sum(accepted & legit)), int(np.sum(~accepted & legit)),
                   int(np.sum(~accepted & ~legit)), int(np.sum(accepted & ~legit)))


@dataclass
class EvalReport:
    frr: float
    far: float
    accuracy: float
    counts: Counts
    intervals: dict
    breakdown: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts: Counts, **extra) -> "EvalReport":
        c = counts
        intervals = {
            "frr": wilson_interval(c.fn, c.n_legit),
            "far": wilson_interval(c.fp, c.n_impostor),
            "accuracy": wilson_interval(c.tp + c.tn, c.n_legit + c.n_impostor),
        }
        return cls(c.frr, c.far, c.accuracy, c, intervals, **extra)

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = asdict(self)
        d["intervals"] = {k: list(v) for k, v in self.intervals.items()}
        if not include_runtime:
            d.pop("runtime")
        return d


# -- classifier factories ---------------------------------------------------

def krr_trainer(rho: float = 1.0) -> Callable:
    def fit(rows: np.ndarray, y: np.ndarray):
        return train_primal(TrainingSet.from_rows(rows, y), rho)
    return fit


def baseline_trainer(kind: str) -> Callable:
    def fit(rows: np.ndarray, y: np.ndarray):
        return train_baseline(kind, TrainingSet.from_rows(rows, y))
    return fit


class ConstantClassifier:
    """Stub that accepts (or rejects) everything."""

    def __init__(self, accept: bool):
        self.value = 1.0 if accept else -1.0

    def scores(self, rows: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(rows)), self.value)


def constant_trainer(accept: bool) -> Callable:
    return lambda rows, y: ConstantClassifier(accept)


TRAINERS = {
    "krr": krr_trainer,
    "linear_regression": lambda rho=None: baseline_trainer("linear_regression"),
    "naive_bayes": lambda rho=None: baseline_trainer("naive_bayes"),
}


# -- cross-validation -------------------------------------------------------

def stratified_folds(y: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row; one shared permutation so relabelling classes keeps folds."""
    perm = rng.permutation(len(y))
    fold = np.empty(len(y), dtype=int)
    for c in np.unique(y):
        members = perm[y[perm] == c]
        fold[members] = np.arange(len(members)) % folds
    return fold


def crossval_labeled(rows: np.ndarray, y: np.ndarray, fit: Callable, folds: int = 10, iterations: int = 1,
                     seed: int = 0, route: np.ndarray | None = None, threshold: float = 0.0) -> Counts:
    """Pooled k-fold counts; with ``route`` a separate model is fit per group."""
    rows = np.asarray(rows, dtype=float)
    y = np.asarray(y, dtype=float)
    for c in (-1.0, 1.0):
        if np.sum(y == c) < folds:
            raise ValidationError(f"need >= {folds} examples of each class, class {c:+g} has {int(np.sum(y == c))}")
    rng = np.random.default_rng(seed)
    total = Counts()
    for _ in range(iterations):
        fold = stratified_folds(y, folds, rng)
        for f in range(folds):
            test, train = fold == f, fold != f
            accepted = np.zeros(int(test.sum()), dtype=bool)
            groups = [None] if route is None else np.unique(route[test])
            pooled = None
            for g in groups:
                tr = train if g is None else train & (route == g)
                te_local = np.ones(int(test.sum()), dtype=bool) if g is None else route[test] == g
                if g is not None and len(np.unique(y[tr])) < 2:
                    if pooled is None:
                        pooled = fit(rows[train], y[train])
                    model = pooled
                else:
                    model = fit(rows[tr], y[tr])
                accepted[te_local] = model.scores(rows[test][te_local]) > threshold
            total = total + Counts.from_verdicts(y[test], accepted)
    return total


def context_detector_for(ds: FeatureDataset, victim, n_trees: int, seed: int, max_rows: int = 2000) -> ForestModel:
    """Forest trained on everyone except ``victim`` (user-agnostic)."""
    pool = np.flatnonzero(ds.user != victim)
    if len(pool) > max_rows:
        pool = np.sort(np.random.default_rng(seed).choice(pool, size=max_rows, replace=False))
    return train_forest(ds.phone[pool], ds.context[pool], n_trees=n_trees, seed=seed)


def crossval(ds: FeatureDataset, folds: int = 10, iterations: int = 50, seed: int = 0,
             device_set: str = PHONE_AND_WATCH, context_mode: str = CONTEXT_AWARE, data_size: int = 800,
             rho: float = 1.0, classifier: str | Callable = "krr", context_source: str = "detected",
             n_trees: int = 100, victims: Sequence | None = None) -> EvalReport:
    """Every user in turn is the legitimate owner; counts pooled over victims."""
    if context_mode not in CONTEXT_MODES:
        raise ValidationError(f"unknown context mode {context_mode!r}")
    fit = TRAINERS[classifier](rho) if isinstance(classifier, str) else classifier
    X = ds.rows(device_set)
    t0 = time.perf_counter()
    total, per_victim = Counts(), {}
    for vi, victim in enumerate(victims if victims is not None else ds.users):
        rng = np.random.default_rng([seed, vi])
        idx, y = victim_split(ds, victim, data_size, rng)
        route = None
        if context_mode == CONTEXT_AWARE:
            if context_source == "detected":
                forest = context_detector_for(ds, victim, n_trees, seed + vi)
                route = forest.predict(ds.phone[idx])
            else:
                route = ds.context[idx]
        c = crossval_labeled(X[idx], y, fit, folds, iterations, int(rng.integers(2**31)), route)
        per_victim[str(victim)] = {"frr": c.frr, "far": c.far, "accuracy": c.accuracy}
        total = total + c
    config = {"folds": folds, "iterations": iterations, "seed": seed, "device_set": device_set,
              "context_mode": context_mode, "data_size": data_size, "rho": rho,
              "classifier": classifier if isinstance(classifier, str) else "custom",
              "context_source": context_source}
    return EvalReport.from_counts(total, breakdown={"per_victim": per_victim}, config=config,
                                  runtime={"seconds": time.perf_counter() - t0})


def ablation(ds: FeatureDataset, **kwargs) -> dict:
    """Four-cell grid over device set x context gating plus the ordering checks."""
    cells = {}
    for device_set in DEVICE_SETS:
        for mode in CONTEXT_MODES:
            cells[f"{device_set}/{mode}"] = crossval(ds, device_set=device_set, context_mode=mode, **kwargs)
    acc = {k: r.accuracy for k, r in cells.items()}
    ordering = {
        "combined_aware>phone_aware": acc[f"{PHONE_AND_WATCH}/{CONTEXT_AWARE}"] > acc[f"{PHONE_ONLY}/{CONTEXT_AWARE}"],
        "phone_aware>phone_free": acc[f"{PHONE_ONLY}/{CONTEXT_AWARE}"] > acc[f"{PHONE_ONLY}/{CONTEXT_FREE}"],
        "combined_free>phone_free": acc[f"{PHONE_AND_WATCH}/{CONTEXT_FREE}"] > acc[f"{PHONE_ONLY}/{CONTEXT_FREE}"],
    }
    return {"cells": cells, "accuracy": acc, "ordering": ordering}


# -- parameter sweeps ---------------------------------------------------------

def sweep_window_size(profiles: Sequence, sizes: Sequence[float] = tuple(range(1, 17)),
                      windows_per_context: int = 100, session_seed: int = 0, **kwargs) -> list[dict]:
    """FRR/FAR/accuracy versus window length.

    One recording per user, long enough for ``windows_per_context`` windows
    of the largest size, is re-segmented at every size, so all points see
    the same signal and the same number of windows.
    """
    from .dataset import enrollment_script, session_features
    from .synth import generate_user

    script = enrollment_script(windows_per_context, max(sizes))
    sessions = [generate_user(p, script, session_seed=session_seed) for p in profiles]
    kwargs.setdefault("data_size", 2 * windows_per_context)
    curve = []
    for size in sizes:
        parts = []
        for s in sessions:
            part = session_features(s, size)
            keep = np.zeros(len(part), dtype=bool)
            for c in range(len(CONTEXTS)):
                keep[np.flatnonzero(part.context == c)[:windows_per_context]] = True
            parts.append(part.subset(keep))
        rep = crossval(FeatureDataset.concat(parts), **kwargs)
        curve.append({"window_s": float(size), "frr": rep.frr, "far": rep.far, "accuracy": rep.accuracy})
    return curve


def sweep_data_size(ds: FeatureDataset, sizes: Sequence[int] = (100, 200, 400, 600, 800, 1000, 1200),
                    **kwargs) -> list[dict]:
    curve = []
    for size in sizes:
        rep = crossval(ds, data_size=int(size), **kwargs)
        curve.append({"data_size": int(size), "frr": rep.frr, "far": rep.far, "accuracy": rep.accuracy})
    return curve


def max_slope_beyond(curve: Sequence[dict], key: str, start: float = 6.0, x: str = "window_s") -> float:
    """Largest |d metric / d x| between consecutive points with x >= start."""
    pts = [(c[x], c[key]) for c in curve if c[x] >= start]
    return max((abs(b[1] - a[1]) / (b[0] - a[0]) for a, b in zip(pts, pts[1:])), default=0.0)


# -- masquerade attacks -------------------------------------------------------

def escape_probability(p: float, n: int) -> float:
    """Chance an attacker accepted with probability ``p`` per window survives ``n`` windows."""
    return p ** n


@dataclass
class MasqueradeResult:
    fidelity: float
    survival: list  # fraction still holding access after n windows, n = 0..horizon
    accept_rate: float  # pooled per-window accept probability
    attacker_accept_rates: list  # per-attacker fitted accept probability
    predicted: list  # attempt-weighted mean of p_a ** n
    within_3sigma: list
    n_attempts: int

    def to_dict(self) -> dict:
        return asdict(self)


def survival_curve(lockout_at: Sequence[int | None], horizon: int) -> list[float]:
    """``lockout_at[i]``: windows processed when attempt i was locked out (None if never)."""
    n = len(lockout_at)
    return [sum(1 for k in lockout_at if k is None or k > w) / n for w in range(horizon + 1)]


def compare_to_independence(survival: Sequence[float], rates: Sequence[float],
                            attempts: Sequence[int]) -> tuple[list, list]:
    """Predicted survival under independent windows and a 3-sigma check.

    Attacker ``a`` escapes ``n`` windows with probability ``rates[a] ** n``;
    the population curve is the attempt-weighted mean, and its binomial
    variance sums the per-attacker Bernoulli variances.
    """
    total = sum(attempts)
    predicted, ok = [], []
    for n, s in enumerate(survival):
        q = [p ** n for p in rates]
        mean = sum(m * qa for m, qa in zip(attempts, q)) / total
        sigma = math.sqrt(sum(m * qa * (1 - qa) for m, qa in zip(attempts, q))) / total
        predicted.append(mean)
        ok.append(abs(s - mean) <= 3 * sigma + 1e-12)
    return predicted, ok


def masquerade_eval(bank, victim, attackers: Sequence, fidelities: Sequence[float] = (0.0, 0.5, 1.0),
                    attempts: int = 20, horizon: int = 5, context: str = "moving", window_s: float = 6.0,
                    seed: int = 0, policy=None) -> list[MasqueradeResult]:
    """Replay mimicry attacks against ``bank`` and fit the p**n escape model.

    Each attacker makes ``attempts`` fresh attempts of ``horizon`` windows at
    every fidelity.  Survival after n windows is the fraction of attempts not
    yet locked out.  Accept probabilities are fitted per attacker from all
    windows of all attempts, lockout or not.
    """
    from .pipeline import RetrainConfig, ResponsePolicy, run_stream
    from .synth import SessionScript, inject_mimicry

    if horizon < 3:
        raise ValidationError("horizon must be at least 3 windows")
    policy = policy or ResponsePolicy()
    no_retrain = RetrainConfig(T_windows=10**9)
    script = SessionScript(((context, horizon * window_s),))
    results = []
    for fid in fidelities:
        lockouts, rates, counts = [], [], []
        accepted_all = total_all = 0
        for ai, attacker in enumerate(attackers):
            accepted = total = 0
            for r in range(attempts):
                session = inject_mimicry(attacker, victim, fid, script, session_seed=seed * 100003 + ai * 1009 + r)
                decisions, events = run_stream(bank, session.streams, policy, no_retrain, window_s)
                accepted += sum(d.verdict == "accept" for d in decisions)
                total += len(decisions)
                locks = [e.k + 1 for e in events if e.kind == "lockout"]
                lockouts.append(locks[0] if locks else None)
            rates.append(accepted / total if total else 0.0)
            counts.append(attempts)
            accepted_all += accepted
            total_all += total
        surv = survival_curve(lockouts, horizon)
        predicted, ok = compare_to_independence(surv, rates, counts)
        results.append(MasqueradeResult(float(fid), surv, accepted_all / max(total_all, 1), rates,
                                        predicted, ok, len(lockouts)))
    return results


# -- result files -------------------------------------------------------------

def write_curve(directory: str | Path, name: str, curve: Sequence[dict]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{name}.json").write_text(json.dumps(list(curve), indent=1), encoding="utf-8")
    if curve:
        with (d / f"{name}.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(curve[0]))
            w.writeheader()
            w.writerows(curve)
