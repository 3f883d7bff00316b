"""Per-window feature tables built from sessions."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .context import CONTEXTS
from .features import COMBINED_LAYOUT, PHONE_LAYOUT, device_matrix, read_feature_csv, write_feature_csv
from .sensors import DEFAULT_RATE_HZ, DEFAULT_WINDOW_S, ValidationError, segment_matrix
from .synth import Session, SessionScript, UserProfile, generate_user

PHONE_ONLY = "phone"
PHONE_AND_WATCH = "phone+watch"
DEVICE_SETS = (PHONE_ONLY, PHONE_AND_WATCH)


@dataclass(eq=False)
class FeatureDataset:
    """Feature rows of every window: phone block, watch block, user, context."""

    phone: np.ndarray
    watch: np.ndarray
    user: np.ndarray
    context: np.ndarray  # indices into CONTEXTS

    def __post_init__(self) -> None:
        n = len(self.user)
        if not (len(self.phone) == len(self.watch) == len(self.context) == n):
            raise ValidationError("dataset columns differ in length")

    def __len__(self) -> int:
        return len(self.user)

    @property
    def users(self) -> list:
        return sorted(set(self.user.tolist()))

    def rows(self, device_set: str = PHONE_AND_WATCH) -> np.ndarray:
        if device_set == PHONE_ONLY:
            return self.phone
        if device_set == PHONE_AND_WATCH:
            return np.hstack([self.phone, self.watch])
        raise ValidationError(f"unknown device set {device_set!r}")

    def subset(self, mask: np.ndarray) -> "FeatureDataset":
        return FeatureDataset(self.phone[mask], self.watch[mask], self.user[mask], self.context[mask])

    @classmethod
    def concat(cls, parts: Sequence["FeatureDataset"]) -> "FeatureDataset":
        return cls(np.vstack([p.phone for p in parts]), np.vstack([p.watch for p in parts]),
                   np.concatenate([p.user for p in parts]), np.concatenate([p.context for p in parts]))

    def save_csv(self, path: str | Path) -> None:
        write_feature_csv(path, self.rows(PHONE_AND_WATCH), COMBINED_LAYOUT,
                          self.user.tolist(), [CONTEXTS[c] for c in self.context])

    @classmethod
    def load_csv(cls, path: str | Path) -> "FeatureDataset":
        X, layout, users, contexts = read_feature_csv(path)
        if layout != COMBINED_LAYOUT:
            raise ValidationError("feature file does not carry the 28-slot phone+watch layout")
        return cls(X[:, :14], X[:, 14:], np.array(users), np.array([CONTEXTS.index(c) for c in contexts]))


def layout_for(device_set: str):
    return PHONE_LAYOUT if device_set == PHONE_ONLY else COMBINED_LAYOUT


def session_features(session: Session, window_s: float = DEFAULT_WINDOW_S) -> FeatureDataset:
    """Window features of a whole session; windows straddling a context change are dropped."""
    mats, starts = {}, None
    for key, stream in session.streams.items():
        mats[key], starts = segment_matrix(stream, window_s)
    n = min(len(m) for m in mats.values())
    rate = next(iter(session.streams.values())).sample_rate_hz
    phone = device_matrix(mats[("phone", "acc")][:n], mats[("phone", "gyr")][:n], rate)
    watch = device_matrix(mats[("watch", "acc")][:n], mats[("watch", "gyr")][:n], rate)
    t = next(iter(session.streams.values())).t
    width = int(round(window_s * rate))
    ctx, keep = [], []
    for k in range(n):
        a = session.context_at(t[starts[k]])
        b = session.context_at(t[starts[k] + width - 1])
        keep.append(a == b)
        ctx.append(CONTEXTS.index(a))
    keep = np.array(keep, dtype=bool)
    return FeatureDataset(phone[keep], watch[keep], np.array([session.user_id] * n)[keep], np.array(ctx)[keep])


def enrollment_script(windows_per_context: int, window_s: float = DEFAULT_WINDOW_S,
                      contexts: Sequence[str] = CONTEXTS) -> SessionScript:
    return SessionScript(tuple((c, windows_per_context * window_s) for c in contexts))


def build_dataset(profiles: Sequence[UserProfile], windows_per_context: int,
                  window_s: float = DEFAULT_WINDOW_S, sample_rate_hz: float = DEFAULT_RATE_HZ,
                  session_seed: int = 0, contexts: Sequence[str] = CONTEXTS) -> FeatureDataset:
    script = enrollment_script(windows_per_context, window_s, contexts)
    parts = [session_features(generate_user(p, script, sample_rate_hz, session_seed), window_s) for p in profiles]
    return FeatureDataset.concat(parts)


def victim_split(ds: FeatureDataset, victim, data_size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Row indices and labels for one victim: per context, ``data_size // 2``
    legitimate windows plus as many impostor windows drawn from other users."""
    half = data_size // 2
    idx, labels = [], []
    for c in range(len(CONTEXTS)):
        own = np.flatnonzero((ds.user == victim) & (ds.context == c))
        others = np.flatnonzero((ds.user != victim) & (ds.context == c))
        if len(own) == 0:
            continue
        own = own[:half]
        imp = np.sort(rng.choice(others, size=min(len(own), len(others)), replace=False))
        idx += [own, imp]
        labels += [np.ones(len(own)), -np.ones(len(imp))]
    if not idx:
        raise ValidationError(f"victim {victim!r} has no windows")
    return np.concatenate(idx), np.concatenate(labels)
