"""Raw sensor streams, magnitudes and fixed-duration windows.

Streams are stored column-wise (``t`` plus an ``(n, 3)`` array of axes) so a
40-minute session does not turn into a million Python objects.  Windows are
cut by sample count, not wall clock: the sampling rate is assumed fixed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

DEVICES = ("phone", "watch")
SENSORS = ("acc", "gyr")
DEFAULT_RATE_HZ = 50.0
DEFAULT_WINDOW_S = 6.0

CSV_COLUMNS = ("device", "sensor", "t", "x", "y", "z")


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True)
class SensorSample:
    t: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.t, self.x, self.y, self.z)):
            raise ValidationError(f"non-finite sensor sample: {self}")


def magnitude(sample: SensorSample) -> float:
    """Euclidean norm of the three axes of ``sample``."""
    vals = (sample.t, sample.x, sample.y, sample.z)
    if not all(math.isfinite(v) for v in vals):
        raise ValidationError("magnitude of a non-finite sample")
    return math.sqrt(sample.x * sample.x + sample.y * sample.y + sample.z * sample.z)


def magnitudes(xyz: np.ndarray) -> np.ndarray:
    """Row-wise magnitudes of an ``(n, 3)`` array."""
    xyz = np.asarray(xyz, dtype=float)
    if xyz.ndim != 2 or xyz.shape[1] != 3:
        raise ValidationError(f"expected (n, 3) samples, got shape {xyz.shape}")
    if not np.all(np.isfinite(xyz)):
        raise ValidationError("non-finite sensor values")
    return np.sqrt(np.einsum("ij,ij->i", xyz, xyz))


@dataclass(frozen=True, eq=False)
class SensorStream:
    device: str
    sensor: str
    t: np.ndarray
    xyz: np.ndarray
    sample_rate_hz: float = DEFAULT_RATE_HZ

    def __post_init__(self) -> None:
        if self.device not in DEVICES:
            raise ValidationError(f"unknown device {self.device!r}")
        if self.sensor not in SENSORS:
            raise ValidationError(f"unknown sensor {self.sensor!r}")
        if not self.sample_rate_hz > 0:
            raise ValidationError("sample_rate_hz must be positive")
        t = np.asarray(self.t, dtype=float).reshape(-1)
        xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3) if len(t) else np.zeros((0, 3))
        if len(t) != len(xyz):
            raise ValidationError("t and xyz lengths differ")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(xyz))):
            raise ValidationError("non-finite sensor values")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValidationError("timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "xyz", xyz)

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_samples(cls, device: str, sensor: str, samples: Iterable[SensorSample],
                     sample_rate_hz: float = DEFAULT_RATE_HZ) -> "SensorStream":
        rows = [(s.t, s.x, s.y, s.z) for s in samples]
        arr = np.array(rows, dtype=float).reshape(-1, 4)
        return cls(device, sensor, arr[:, 0], arr[:, 1:], sample_rate_hz)

    def samples(self) -> Iterator[SensorSample]:
        for t, (x, y, z) in zip(self.t, self.xyz):
            yield SensorSample(float(t), float(x), float(y), float(z))

    def magnitudes(self) -> np.ndarray:
        return magnitudes(self.xyz)


@dataclass(frozen=True, eq=False)
class Window:
    index_k: int
    duration_s: float
    magnitudes: np.ndarray
    sample_rate_hz: float = DEFAULT_RATE_HZ
    t_start: float = 0.0
    t_end: float = 0.0

    def __len__(self) -> int:
        return len(self.magnitudes)


def window_length(duration_s: float, sample_rate_hz: float) -> int:
    if not duration_s > 0:
        raise ValidationError("window duration must be positive")
    n = int(round(duration_s * sample_rate_hz))
    if n < 1:
        raise ValidationError("window shorter than one sample")
    return n


def segment_matrix(stream: SensorStream, duration_s: float = DEFAULT_WINDOW_S,
                   hop_s: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Cut ``stream`` into windows and return ``(mags, starts)``.

    ``mags`` has shape ``(n_windows, window_len)``; ``starts`` holds the first
    sample index of every window.  A trailing partial window is dropped.
    """
    n = window_length(duration_s, stream.sample_rate_hz)
    hop = n if hop_s is None else window_length(hop_s, stream.sample_rate_hz)
    total = len(stream)
    if total < n:
        return np.zeros((0, n)), np.zeros(0, dtype=int)
    starts = np.arange(0, total - n + 1, hop)
    mags = stream.magnitudes()
    if hop == n:
        return mags[: len(starts) * n].reshape(len(starts), n), starts
    idx = starts[:, None] + np.arange(n)[None, :]
    return mags[idx], starts


def segment(stream: SensorStream, duration_s: float = DEFAULT_WINDOW_S,
            hop_s: float | None = None) -> list[Window]:
    """Consecutive windows of ``round(duration_s * rate)`` magnitudes each."""
    mags, starts = segment_matrix(stream, duration_s, hop_s)
    n = mags.shape[1]
    return [
        Window(k, duration_s, mags[k], stream.sample_rate_hz,
               float(stream.t[s]), float(stream.t[s + n - 1]))
        for k, s in enumerate(starts)
    ]


def window_has_gap(stream: SensorStream, start: int, length: int, tolerance: float = 1.5) -> bool:
    """True if any sample spacing inside the window exceeds ``tolerance`` periods."""
    dt = np.diff(stream.t[start:start + length])
    return bool(np.any(dt > tolerance / stream.sample_rate_hz))


# -- file ingestion ---------------------------------------------------------

def _rows_to_streams(rows: Iterable[dict], sample_rate_hz: float) -> dict[tuple[str, str], SensorStream]:
    grouped: dict[tuple[str, str], list[tuple[float, float, float, float]]] = {}
    for row in rows:
        try:
            key = (str(row["device"]).strip().lower(), str(row["sensor"]).strip().lower())
            vals = tuple(float(row[c]) for c in ("t", "x", "y", "z"))
        except KeyError as exc:
            raise ValidationError(f"missing column {exc}") from None
        grouped.setdefault(key, []).append(vals)
    out = {}
    for key, vals in grouped.items():
        arr = np.array(sorted(vals), dtype=float)
        out[key] = SensorStream(key[0], key[1], arr[:, 0], arr[:, 1:], sample_rate_hz)
    return out


def read_sensor_file(path: str | Path, sample_rate_hz: float = DEFAULT_RATE_HZ) -> dict[tuple[str, str], SensorStream]:
    """Load a ``device,sensor,t,x,y,z`` CSV or JSONL file keyed by (device, sensor)."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        if path.suffix in (".jsonl", ".json"):
            rows = [json.loads(line) for line in fh if line.strip()]
        else:
            rows = list(csv.DictReader(fh))
    return _rows_to_streams(rows, sample_rate_hz)


def write_sensor_file(path: str | Path, streams: Iterable[SensorStream]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    jsonl = path.suffix in (".jsonl", ".json")
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = None if jsonl else csv.writer(fh)
        if writer:
            writer.writerow(CSV_COLUMNS)
        for s in streams:
            for t, (x, y, z) in zip(s.t, s.xyz):
                row = (s.device, s.sensor, repr(float(t)), repr(float(x)), repr(float(y)), repr(float(z)))
                if writer:
                    writer.writerow(row)
                else:
                    fh.write(json.dumps(dict(zip(CSV_COLUMNS, (row[0], row[1]) + tuple(float(v) for v in row[2:])))) + "\n")
