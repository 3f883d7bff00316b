"""Streaming authentication: windows -> features -> context -> KRR verdict.

A :class:`ModelBank` holds one authentication model per (context, device
set) plus the shared context forest.  :func:`run_stream` walks the windows
of a recording in order, applies the lockout policy and watches the
confidence score for behavioural drift, retraining when the owner's scores
stay positive but low for ``T_windows`` windows.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .context import CONTEXTS, ForestModel, detect
from .dataset import DEVICE_SETS, PHONE_AND_WATCH, PHONE_ONLY, FeatureDataset, layout_for, victim_split
from .features import device_features, device_matrix
from .krr import ACCEPT, REJECT, AuthModel, TrainingSet, train_primal
from .sensors import DEFAULT_WINDOW_S, ValidationError, Window, segment_matrix, window_has_gap

LOCK = "lock"
DENY_SENSITIVE = "deny-sensitive"
LOG = "log"


class NoModelError(LookupError):
    """No authentication model for the detected context and device set."""


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class ResponsePolicy:
    lockout_after_rejections: int = 1
    action: str = LOCK

    def __post_init__(self) -> None:
        if self.lockout_after_rejections < 1:
            raise ValidationError("lockout_after_rejections must be >= 1")
        if self.action not in (LOCK, DENY_SENSITIVE, LOG):
            raise ValidationError(f"unknown action {self.action!r}")


@dataclass(frozen=True)
class RetrainConfig:
    epsilon_cs: float = 0.2
    T_windows: int = 100
    buffer_windows: int = 400  # latest accepted windows kept per model for retraining
    min_samples: int | None = None  # defaults to T_windows

    def __post_init__(self) -> None:
        if not self.epsilon_cs > 0:
            raise ValidationError("epsilon_cs must be > 0")
        if self.T_windows < 1 or self.buffer_windows < 1:
            raise ValidationError("T_windows and buffer_windows must be >= 1")

    @property
    def required_samples(self) -> int:
        return self.T_windows if self.min_samples is None else self.min_samples


@dataclass(frozen=True)
class Decision:
    k: int
    context: str
    vote_fraction: float
    cs: float
    verdict: str
    device_set: str
    latency_s: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {"k": self.k, "context": self.context, "vote_fraction": self.vote_fraction, "cs": self.cs,
                "verdict": self.verdict, "device_set": self.device_set}


@dataclass(frozen=True)
class Event:
    kind: str  # lockout | reauth | retrain_trigger | retrain | retrain_deferred | gap
    k: int
    detail: tuple = ()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k, **dict(self.detail)}


@dataclass
class ModelBank:
    models: dict  # (context, device_set) -> AuthModel
    context_model: ForestModel
    owner_id: str = ""
    version: int = 1
    archive: list = field(default_factory=list)  # (version, key, AuthModel)

    def __post_init__(self) -> None:
        if not any(all((c, d) in self.models for c in CONTEXTS) for d in DEVICE_SETS):
            raise ValidationError("bank needs models for both contexts for at least one device set")

    def model_for(self, context: str, device_set: str) -> AuthModel:
        try:
            return self.models[(context, device_set)]
        except KeyError:
            raise NoModelError(f"no model for context={context!r}, devices={device_set!r}") from None

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.context_model.save(d / "context.json")
        index = {"owner_id": self.owner_id, "version": self.version, "models": []}
        for (ctx, ds), m in sorted(self.models.items()):
            name = f"auth_{ctx}_{ds.replace('+', '_')}.json"
            m.save(d / name)
            index["models"].append({"context": ctx, "device_set": ds, "file": name})
        (d / "bank.json").write_text(json.dumps(index, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "ModelBank":
        d = Path(directory)
        index = json.loads((d / "bank.json").read_text(encoding="utf-8"))
        models = {(e["context"], e["device_set"]): AuthModel.load(d / e["file"]) for e in index["models"]}
        return cls(models, ForestModel.load(d / "context.json"), index["owner_id"], index["version"])


# -- enrollment -------------------------------------------------------------

def impostor_pool(ds: FeatureDataset, owner) -> dict:
    """Other users' feature rows keyed by (context, device_set)."""
    pool = {}
    for ci, ctx in enumerate(CONTEXTS):
        mask = (ds.user != owner) & (ds.context == ci)
        for dset in DEVICE_SETS:
            pool[(ctx, dset)] = ds.rows(dset)[mask]
    return pool


def enroll(ds: FeatureDataset, owner, context_model: ForestModel, rho: float = 1.0, data_size: int = 800,
           seed: int = 0, device_sets: Sequence[str] = DEVICE_SETS) -> ModelBank:
    """Train one model per context and device set for ``owner``.

    Windows are assigned to contexts by the (user-agnostic) detector, as
    during real enrollment.
    """
    idx, y = victim_split(ds, owner, data_size, np.random.default_rng(seed))
    detected = context_model.predict(ds.phone[idx])
    models = {}
    for ci, ctx in enumerate(CONTEXTS):
        sel = detected == ci
        if len(np.unique(y[sel])) < 2:
            continue
        for dset in device_sets:
            rows = ds.rows(dset)[idx][sel]
            models[(ctx, dset)] = train_primal(TrainingSet.from_rows(rows, y[sel]), rho, ctx, layout_for(dset))
    return ModelBank(models, context_model, str(owner))


# -- per-window decisions ---------------------------------------------------

def _decide(bank: ModelBank, phone_row: np.ndarray, watch_row: np.ndarray | None, k: int,
            threshold: float) -> Decision:
    context, frac = detect(bank.context_model, phone_row)
    device_set = PHONE_AND_WATCH if watch_row is not None and (context, PHONE_AND_WATCH) in bank.models else PHONE_ONLY
    model = bank.model_for(context, device_set)
    row = phone_row if device_set == PHONE_ONLY else np.concatenate([phone_row, watch_row])
    cs = float(model.scores(row[None, :])[0])
    return Decision(k, context, frac, cs, ACCEPT if cs > threshold else REJECT, device_set)


def authenticate_window(bank: ModelBank, phone_acc: Window, phone_gyr: Window,
                        watch_acc: Window | None = None, watch_gyr: Window | None = None,
                        threshold: float = 0.0) -> Decision:
    """Detect the context from the phone, then score with the matching model."""
    t0 = time.perf_counter()
    phone = device_features(phone_acc, phone_gyr, device="phone").values
    watch = None
    if watch_acc is not None and watch_gyr is not None:
        watch = device_features(watch_acc, watch_gyr, device="watch").values
    d = _decide(bank, phone, watch, phone_acc.index_k, threshold)
    return replace(d, latency_s=time.perf_counter() - t0)


def monitor_cs(decisions: Sequence[Decision], cfg: RetrainConfig) -> Event | None:
    """Retrain trigger when the last ``T_windows`` scores all lie in (0, epsilon)."""
    if len(decisions) < cfg.T_windows:
        return None
    recent = decisions[-cfg.T_windows:]
    if all(0 < d.cs < cfg.epsilon_cs for d in recent):
        return Event("retrain_trigger", recent[-1].k,
                     (("mean_cs", float(np.mean([d.cs for d in recent]))), ("windows", cfg.T_windows)))
    return None


def retrain(bank: ModelBank, legit: Mapping, impostors: Mapping, rho: float = 1.0,
            min_samples: int = 1, seed: int = 0) -> ModelBank:
    """New bank with models refit on recent owner windows plus impostor rows.

    Impostor rows are downsampled to the number of owner rows.  Models
    without ``min_samples`` fresh owner windows are kept as they are.
    """
    models = dict(bank.models)
    archive = list(bank.archive)
    updated = []
    for key in sorted(legit):
        own = np.asarray(legit[key], dtype=float)
        if key not in bank.models or len(own) < min_samples:
            continue
        pool = np.asarray(impostors.get(key, np.zeros((0, own.shape[1] if own.ndim == 2 else 0))), dtype=float)
        if len(pool) == 0:
            continue
        rng = np.random.default_rng([seed, len(own), bank.version])
        pick = np.sort(rng.choice(len(pool), size=min(len(own), len(pool)), replace=False))
        rows = np.vstack([own, pool[pick]])
        y = np.concatenate([np.ones(len(own)), -np.ones(len(pick))])
        old = bank.models[key]
        models[key] = train_primal(TrainingSet.from_rows(rows, y), rho, key[0], old.layout)
        archive.append((bank.version, key, old))
        updated.append(key)
    if not updated:
        raise InsufficientDataError(f"no model has >= {min_samples} fresh owner windows")
    return ModelBank(models, bank.context_model, bank.owner_id, bank.version + 1, archive)


# -- streaming ----------------------------------------------------------------

def _stream_windows(streams: Mapping, device: str, window_s: float):
    acc, gyr = streams.get((device, "acc")), streams.get((device, "gyr"))
    if acc is None or gyr is None or len(acc) == 0 or len(gyr) == 0:
        return None
    ma, sa = segment_matrix(acc, window_s)
    mg, sg = segment_matrix(gyr, window_s)
    n = min(len(ma), len(mg))
    width = ma.shape[1]
    gaps = np.array([window_has_gap(acc, sa[k], width) or window_has_gap(gyr, sg[k], width) for k in range(n)], dtype=bool)
    rows = device_matrix(ma[:n], mg[:n], acc.sample_rate_hz)
    return rows, gaps


def run_stream(bank: ModelBank, streams: Mapping, policy: ResponsePolicy = ResponsePolicy(),
               retrain_cfg: RetrainConfig = RetrainConfig(), window_s: float = DEFAULT_WINDOW_S,
               impostors: Mapping | None = None, rho: float = 1.0, threshold: float = 0.0,
               reauth: Callable[[int], bool] | None = None, seed: int = 0) -> tuple[list[Decision], list[Event]]:
    """Authenticate every window of ``streams`` (keyed by (device, sensor)) in order.

    ``reauth(k)`` is the explicit-authentication hook called on lockout;
    returning True re-admits the user.  Retraining only happens when an
    impostor pool is supplied; the new bank is swapped in before the next
    window.
    """
    phone = _stream_windows(streams, "phone", window_s)
    if phone is None:
        raise ValidationError("phone accelerometer and gyroscope streams are required")
    phone_rows, phone_gaps = phone
    if len(phone_rows) == 0:
        raise ValidationError("streams shorter than one window")
    watch = _stream_windows(streams, "watch", window_s)

    decisions: list[Decision] = []
    events: list[Event] = []
    since_swap: list[Decision] = []
    buffers: dict = {}
    rejects, locked = 0, False
    for k in range(len(phone_rows)):
        if phone_gaps[k]:
            events.append(Event("gap", k, (("device", "phone"),)))
            continue
        watch_row = None
        if watch is not None and k < len(watch[0]):
            if watch[1][k]:
                events.append(Event("gap", k, (("device", "watch"),)))
            else:
                watch_row = watch[0][k]
        t0 = time.perf_counter()
        d = _decide(bank, phone_rows[k], watch_row, k, threshold)
        d = replace(d, latency_s=time.perf_counter() - t0)
        decisions.append(d)
        since_swap.append(d)

        if d.verdict == ACCEPT:
            rejects = 0
            key = (d.context, d.device_set)
            row = phone_rows[k] if d.device_set == PHONE_ONLY else np.concatenate([phone_rows[k], watch_row])
            buf = buffers.setdefault(key, [])
            buf.append(row)
            del buf[:-retrain_cfg.buffer_windows]
        else:
            rejects += 1
            if rejects >= policy.lockout_after_rejections and not locked:
                events.append(Event("lockout", k, (("action", policy.action), ("rejections", rejects))))
                rejects, locked = 0, True
                if reauth is not None and reauth(k):
                    events.append(Event("reauth", k))
                    locked = False

        trigger = monitor_cs(since_swap, retrain_cfg)
        if trigger is None:
            continue
        events.append(trigger)
        since_swap = []
        if impostors is None:
            continue
        try:
            bank = retrain(bank, {key: np.array(v) for key, v in buffers.items()}, impostors, rho,
                           retrain_cfg.required_samples, seed)
            events.append(Event("retrain", k, (("version", bank.version),)))
            buffers = {}
        except InsufficientDataError as exc:
            events.append(Event("retrain_deferred", k, (("reason", str(exc)),)))
    return decisions, events
