"""Time- and frequency-domain window statistics and authentication vectors.

Conventions: population variance, rectangular (untapered) DFT, amplitudes
scaled by ``2/n`` so a unit sinusoid has unit peak, DC bin excluded from the
peak search, ties between equal amplitudes resolved toward lower frequency.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .sensors import SENSORS, ValidationError, Window

CANDIDATE_FEATURES = ("mean", "var", "max", "min", "ran", "peak", "peak_f", "peak2", "peak2_f")
PRODUCTION_FEATURES = ("mean", "var", "max", "min", "peak", "peak_f", "peak2")
ROUNDOFF = 64 * np.finfo(float).eps
_PRODUCTION_IDX = [CANDIDATE_FEATURES.index(f) for f in PRODUCTION_FEATURES]


class Slot(NamedTuple):
    device: str
    sensor: str
    feature: str

    @property
    def name(self) -> str:
        return f"{self.device}_{self.sensor}_{self.feature}"


def device_layout(device: str = "phone") -> tuple[Slot, ...]:
    return tuple(Slot(device, s, f) for s in SENSORS for f in PRODUCTION_FEATURES)


PHONE_LAYOUT = device_layout("phone")
WATCH_LAYOUT = device_layout("watch")
COMBINED_LAYOUT = PHONE_LAYOUT + WATCH_LAYOUT


class TimeFeatures(NamedTuple):
    mean: float
    var: float
    max: float
    min: float
    ran: float


class FreqFeatures(NamedTuple):
    peak: float
    peak_f: float
    peak2: float
    peak2_f: float


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    layout: tuple[Slot, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(values) != len(self.layout):
            raise ValidationError(f"{len(values)} values for a {len(self.layout)}-slot layout")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", tuple(self.layout))

    @property
    def dim(self) -> int:
        return len(self.values)

    def names(self) -> list[str]:
        return [s.name for s in self.layout]


def _as_series(window: Window | Sequence[float] | np.ndarray) -> np.ndarray:
    mags = window.magnitudes if isinstance(window, Window) else window
    return np.asarray(mags, dtype=float)


def time_features(window: Window | Sequence[float]) -> TimeFeatures:
    s = _as_series(window)
    if s.size == 0:
        raise ValidationError("time features of an empty window")
    mean = float(s.mean())
    hi, lo = float(s.max()), float(s.min())
    return TimeFeatures(mean, float(np.mean((s - mean) ** 2)), hi, lo, hi - lo)


def _floor_roundoff(amps: np.ndarray, scale) -> np.ndarray:
    # FFT round-off leaves ~eps * |s| in bins that are exactly zero in theory;
    # zeroing them keeps the lower-frequency tie-break meaningful
    return np.where(amps <= ROUNDOFF * scale, 0.0, amps)


def spectrum(window: Window | Sequence[float], sample_rate_hz: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(freqs, amps)`` for the DFT bins in ``(0, Nyquist]``."""
    s = _as_series(window)
    if sample_rate_hz is None:
        if not isinstance(window, Window):
            raise ValidationError("sample_rate_hz required for a bare series")
        sample_rate_hz = window.sample_rate_hz
    if s.size < 2:
        raise ValidationError("spectrum needs at least 2 samples")
    n = s.size
    amps = _floor_roundoff(2.0 * np.abs(np.fft.rfft(s)[1:]) / n, np.max(np.abs(s)))
    freqs = np.arange(1, n // 2 + 1) * (sample_rate_hz / n)
    return freqs, amps


def freq_features(freqs: Sequence[float], amps: Sequence[float]) -> FreqFeatures:
    freqs = np.asarray(freqs, dtype=float)
    amps = np.asarray(amps, dtype=float)
    if freqs.size == 0 or freqs.size != amps.size:
        raise ValidationError("spectrum must be non-empty with matching lengths")
    order = np.lexsort((freqs, -amps))
    i = order[0]
    j = order[1] if order.size > 1 else order[0]
    return FreqFeatures(float(amps[i]), float(freqs[i]), float(amps[j]), float(freqs[j]))


def candidate_features(window: Window, sample_rate_hz: float | None = None) -> np.ndarray:
    """All nine candidate statistics of one window, in ``CANDIDATE_FEATURES`` order."""
    tf = time_features(window)
    ff = freq_features(*spectrum(window, sample_rate_hz))
    return np.array([tf.mean, tf.var, tf.max, tf.min, tf.ran, ff.peak, ff.peak_f, ff.peak2, ff.peak2_f])


def candidate_matrix(mags: np.ndarray, sample_rate_hz: float) -> np.ndarray:
    """Vectorised ``candidate_features`` over the rows of ``mags``."""
    mags = np.asarray(mags, dtype=float)
    if mags.ndim != 2 or mags.shape[1] < 2:
        raise ValidationError("expected a (n_windows, len >= 2) matrix")
    n_win, n = mags.shape
    out = np.empty((n_win, len(CANDIDATE_FEATURES)))
    if n_win == 0:
        return out
    mean = mags.mean(axis=1)
    out[:, 0] = mean
    out[:, 1] = np.mean((mags - mean[:, None]) ** 2, axis=1)
    out[:, 2] = mags.max(axis=1)
    out[:, 3] = mags.min(axis=1)
    out[:, 4] = out[:, 2] - out[:, 3]

    amps = _floor_roundoff(2.0 * np.abs(np.fft.rfft(mags, axis=1)[:, 1:]) / n,
                           np.max(np.abs(mags), axis=1, keepdims=True))
    freqs = np.arange(1, n // 2 + 1) * (sample_rate_hz / n)
    rows = np.arange(n_win)
    # argmax returns the first maximum, i.e. the lower frequency on ties
    i = np.argmax(amps, axis=1)
    out[:, 5] = amps[rows, i]
    out[:, 6] = freqs[i]
    if amps.shape[1] > 1:
        masked = amps.copy()
        masked[rows, i] = -np.inf
        j = np.argmax(masked, axis=1)
    else:
        j = i
    out[:, 7] = amps[rows, j]
    out[:, 8] = freqs[j]
    return out


def sensor_matrix(mags: np.ndarray, sample_rate_hz: float) -> np.ndarray:
    """Production 7-feature block for each window row."""
    return candidate_matrix(mags, sample_rate_hz)[:, _PRODUCTION_IDX]


def device_matrix(acc_mags: np.ndarray, gyr_mags: np.ndarray, sample_rate_hz: float) -> np.ndarray:
    n = min(len(acc_mags), len(gyr_mags))
    return np.hstack([sensor_matrix(acc_mags[:n], sample_rate_hz),
                      sensor_matrix(gyr_mags[:n], sample_rate_hz)])


def device_features(acc: Window, gyr: Window, sample_rate_hz: float | None = None,
                    device: str = "phone") -> FeatureVector:
    if acc.index_k != gyr.index_k:
        raise ValidationError(f"window index mismatch: acc k={acc.index_k}, gyr k={gyr.index_k}")
    vals = [candidate_features(w, sample_rate_hz)[_PRODUCTION_IDX] for w in (acc, gyr)]
    return FeatureVector(np.concatenate(vals), device_layout(device))


def auth_vector(phone: FeatureVector, watch: FeatureVector | None = None) -> FeatureVector:
    """``[SP, SW]`` when the watch vector is present, otherwise ``SP`` alone."""
    if phone.dim != len(PHONE_LAYOUT):
        raise ValidationError(f"phone vector must be {len(PHONE_LAYOUT)}-dim, got {phone.dim}")
    if watch is None:
        return phone
    if watch.dim != len(WATCH_LAYOUT):
        raise ValidationError(f"watch vector must be {len(WATCH_LAYOUT)}-dim, got {watch.dim}")
    return FeatureVector(np.concatenate([phone.values, watch.values]), phone.layout + watch.layout)


# -- feature files ----------------------------------------------------------

def write_feature_csv(path: str | Path, X: np.ndarray, layout: Sequence[Slot],
                      user_ids: Sequence, contexts: Sequence | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([s.name for s in layout] + ["user_id", "context"])
        for i, row in enumerate(np.asarray(X, dtype=float)):
            ctx = "" if contexts is None else contexts[i]
            w.writerow([repr(float(v)) for v in row] + [user_ids[i], ctx])


def read_feature_csv(path: str | Path) -> tuple[np.ndarray, tuple[Slot, ...], list[str], list[str]]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    names = header[:-2]
    layout = []
    for name in names:
        device, sensor, feature = name.split("_", 2)
        layout.append(Slot(device, sensor, feature))
    X = np.array([[float(v) for v in r[:-2]] for r in rows]).reshape(len(rows), len(names))
    return X, tuple(layout), [r[-2] for r in rows], [r[-1] for r in rows]
