"""Synthetic multi-user, two-device, two-context sensor sessions.

Each sensor of each device follows a sinusoid-plus-noise gait model along a
fixed unit direction::

    s(t)   = offset + a1 * sin(phi(t)) + a2 * sin(2 * phi(t) + phase2)
    xyz(t) = direction * s(t) + N(0, noise_std^2) per axis

where ``phi`` integrates the motion frequency.  Offset, amplitudes and
frequency are re-drawn around the user's nominal values every
``jitter_period_s`` so windows of the same user vary.  With ``offset > a1 +
a2`` the magnitude equals ``s(t)`` up to noise, which keeps the true peak
frequencies known.  This is a tractable stand-in for real recordings, not a
biomechanical model; accuracies measured on it say nothing about real users.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .context import CONTEXTS, MOVING, STATIONARY
from .sensors import DEFAULT_RATE_HZ, DEVICES, SENSORS, SensorStream, ValidationError

GRAVITY = 9.81


@dataclass(frozen=True)
class MotionParams:
    freq_hz: float
    amp1: float
    amp2: float
    phase2: float
    offset: float
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    noise_std: float = 0.0
    amp_jitter: float = 0.0
    freq_jitter: float = 0.0
    offset_jitter: float = 0.0

    def validate(self, sample_rate_hz: float) -> None:
        nyquist = sample_rate_hz / 2
        if not 0 < self.freq_hz < nyquist:
            raise ValidationError(f"frequency {self.freq_hz} Hz outside (0, {nyquist})")
        if self.amp2 > 0 and not 2 * self.freq_hz < nyquist:
            raise ValidationError(f"second harmonic {2 * self.freq_hz} Hz at or above Nyquist")
        if self.amp1 < 0 or self.amp2 < 0 or self.noise_std < 0:
            raise ValidationError("amplitudes and noise_std must be non-negative")
        if min(self.amp_jitter, self.freq_jitter, self.offset_jitter) < 0:
            raise ValidationError("jitter levels must be non-negative")
        if np.linalg.norm(self.direction) == 0:
            raise ValidationError("direction must be non-zero")


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    params: dict  # (context, device, sensor) -> MotionParams
    seed: int = 0

    def get(self, context: str, device: str, sensor: str) -> MotionParams:
        return self.params[(context, device, sensor)]


@dataclass(frozen=True)
class SessionScript:
    segments: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        for ctx, dur in self.segments:
            if ctx not in CONTEXTS:
                raise ValidationError(f"unknown context {ctx!r}")
            if not dur > 0:
                raise ValidationError("segment durations must be positive")

    @property
    def duration_s(self) -> float:
        return sum(d for _, d in self.segments)


@dataclass
class Session:
    streams: dict  # (device, sensor) -> SensorStream
    segments: list  # (context, t_start, t_end)
    user_id: str

    def context_at(self, t: float) -> str:
        for ctx, a, b in self.segments:
            if a <= t < b:
                return ctx
        return self.segments[-1][0]

    def window_contexts(self, window_s: float, n_windows: int) -> list[str]:
        return [self.context_at((k + 0.5) * window_s) for k in range(n_windows)]


# -- signal synthesis -------------------------------------------------------

def _piecewise(rng: np.random.Generator, n: int, per_piece: int, scale: float) -> np.ndarray:
    pieces = -(-n // per_piece)
    vals = rng.standard_normal(pieces) * scale
    return np.repeat(vals, per_piece)[:n]


def motion_signal(p: MotionParams, n: int, sample_rate_hz: float, rng: np.random.Generator,
                  jitter_period_s: float = 3.0) -> np.ndarray:
    """Scalar motion signal ``s(t)`` for ``n`` samples (no sensor noise)."""
    per = max(1, int(round(jitter_period_s * sample_rate_hz)))
    freq = p.freq_hz * (1 + _piecewise(rng, n, per, p.freq_jitter))
    amp = 1 + _piecewise(rng, n, per, p.amp_jitter)
    offset = p.offset * (1 + _piecewise(rng, n, per, p.offset_jitter))
    phase0 = rng.uniform(0, 2 * math.pi)
    # phase of sample i integrates the frequency of samples 0..i-1
    phi = phase0 + 2 * math.pi * np.concatenate([[0.0], np.cumsum(freq[:-1])]) / sample_rate_hz
    return offset + amp * (p.amp1 * np.sin(phi) + p.amp2 * np.sin(2 * phi + p.phase2))


def sensor_xyz(p: MotionParams, n: int, sample_rate_hz: float, rng: np.random.Generator,
               jitter_period_s: float = 3.0) -> np.ndarray:
    s = motion_signal(p, n, sample_rate_hz, rng, jitter_period_s)
    d = np.asarray(p.direction, dtype=float)
    d = d / np.linalg.norm(d)
    xyz = s[:, None] * d[None, :]
    if p.noise_std > 0:
        xyz = xyz + rng.standard_normal((n, 3)) * p.noise_std
    return xyz


def _stream_rng(seed: int, session_seed: int, *labels: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, session_seed, *labels]))


def generate_user(profile: UserProfile, script: SessionScript, sample_rate_hz: float = DEFAULT_RATE_HZ,
                  session_seed: int = 0, jitter_period_s: float = 3.0) -> Session:
    """Phone and watch accelerometer/gyroscope streams following ``script``."""
    for p in profile.params.values():
        p.validate(sample_rate_hz)
    counts = [int(round(d * sample_rate_hz)) for _, d in script.segments]
    total = sum(counts)
    t = np.arange(total) / sample_rate_hz
    streams = {}
    for di, device in enumerate(DEVICES):
        for si, sensor in enumerate(SENSORS):
            parts = []
            for gi, ((ctx, _), n) in enumerate(zip(script.segments, counts)):
                rng = _stream_rng(profile.seed, session_seed, di, si, gi)
                parts.append(sensor_xyz(profile.get(ctx, device, sensor), n, sample_rate_hz, rng, jitter_period_s))
            xyz = np.vstack(parts) if parts else np.zeros((0, 3))
            streams[(device, sensor)] = SensorStream(device, sensor, t, xyz, sample_rate_hz)
    segments, start = [], 0
    for (ctx, _), n in zip(script.segments, counts):
        segments.append((ctx, start / sample_rate_hz, (start + n) / sample_rate_hz))
        start += n
    return Session(streams, segments, profile.user_id)


# -- populations ------------------------------------------------------------

@dataclass(frozen=True)
class Preset:
    """Population spread versus within-user variability."""

    spread: float
    amp_jitter: float
    freq_jitter: float
    offset_jitter: float
    noise_scale: float = 1.0


PRESETS = {
    "separable": Preset(spread=0.4, amp_jitter=0.10, freq_jitter=0.04, offset_jitter=0.02),
    "overlapping": Preset(spread=0.1, amp_jitter=0.10, freq_jitter=0.04, offset_jitter=0.02),
    "steady": Preset(spread=0.4, amp_jitter=0.01, freq_jitter=0.005, offset_jitter=0.002),
    "trivial": Preset(spread=0.5, amp_jitter=0.0, freq_jitter=0.0, offset_jitter=0.0, noise_scale=0.1),
    "identical": Preset(spread=0.0, amp_jitter=0.10, freq_jitter=0.04, offset_jitter=0.02),
}

# nominal (freq_hz, amp1, amp2, offset, noise_std) per context and sensor
_NOMINAL = {
    (MOVING, "acc"): (1.8, 2.5, 1.0, GRAVITY + 1.0, 0.25),
    (MOVING, "gyr"): (1.8, 1.2, 0.5, 5.0, 0.08),
    (STATIONARY, "acc"): (0.8, 0.10, 0.04, GRAVITY, 0.03),
    (STATIONARY, "gyr"): (0.8, 0.05, 0.02, 0.3, 0.01),
}


def random_profile(user_id: str, rng: np.random.Generator, preset: Preset | str = "separable",
                   seed: int | None = None) -> UserProfile:
    if isinstance(preset, str):
        preset = PRESETS[preset]
    spread = preset.spread

    def draw(center: float) -> float:
        return center * (1 + spread * rng.uniform(-1, 1))

    params = {}
    for ctx in CONTEXTS:
        # one motion rhythm per user and context, shared by both devices
        rhythm = draw(1.0)
        for device in DEVICES:
            for sensor in SENSORS:
                f0, a1, a2, off, noise = _NOMINAL[(ctx, sensor)]
                v = rng.standard_normal(3)
                params[(ctx, device, sensor)] = MotionParams(
                    freq_hz=f0 * rhythm,
                    amp1=draw(a1),
                    amp2=draw(a2),
                    phase2=rng.uniform(0, 2 * math.pi) if spread > 0 else 0.0,
                    offset=draw(off - (GRAVITY if sensor == "acc" else 0.0)) + (GRAVITY if sensor == "acc" else 0.0),
                    direction=tuple(float(c) for c in v / np.linalg.norm(v)),
                    noise_std=noise * preset.noise_scale,
                    amp_jitter=preset.amp_jitter,
                    freq_jitter=preset.freq_jitter,
                    offset_jitter=preset.offset_jitter,
                )
    return UserProfile(user_id, params, seed if seed is not None else int(rng.integers(2**31)))


def make_population(n_users: int, preset: str = "separable", seed: int = 0) -> list[UserProfile]:
    """``n_users`` profiles drawn deterministically from ``seed``."""
    if preset not in PRESETS:
        raise ValidationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    rng = np.random.default_rng(seed)
    if preset == "identical":
        template = random_profile("template", rng, PRESETS["separable"])
        base = {k: replace(v, phase2=0.0, amp_jitter=PRESETS[preset].amp_jitter)
                for k, v in template.params.items()}
        return [UserProfile(f"u{i:02d}", dict(base), int(rng.integers(2**31))) for i in range(n_users)]
    return [random_profile(f"u{i:02d}", rng, preset) for i in range(n_users)]


def _blend(a: float, b: float, lam: float) -> float:
    return (1 - lam) * a + lam * b


def mimic_profile(attacker: UserProfile, victim: UserProfile, fidelity: float) -> UserProfile:
    """Attacker whose motion parameters are blended toward the victim's.

    Noise level, jitter and random seed stay the attacker's own.
    """
    if not 0 <= fidelity <= 1:
        raise ValidationError("fidelity must lie in [0, 1]")
    params = {}
    for key, pa in attacker.params.items():
        pv = victim.params[key]
        d = np.array(pa.direction) * (1 - fidelity) + np.array(pv.direction) * fidelity
        if np.linalg.norm(d) < 1e-12:
            d = np.array(pv.direction)
        params[key] = replace(
            pa,
            freq_hz=_blend(pa.freq_hz, pv.freq_hz, fidelity),
            amp1=_blend(pa.amp1, pv.amp1, fidelity),
            amp2=_blend(pa.amp2, pv.amp2, fidelity),
            phase2=_blend(pa.phase2, pv.phase2, fidelity),
            offset=_blend(pa.offset, pv.offset, fidelity),
            direction=tuple(float(c) for c in d / np.linalg.norm(d)),
        )
    return UserProfile(f"{attacker.user_id}->{victim.user_id}@{fidelity:g}", params, attacker.seed)


def inject_mimicry(attacker: UserProfile, victim: UserProfile, fidelity: float, script: SessionScript,
                   sample_rate_hz: float = DEFAULT_RATE_HZ, session_seed: int = 0) -> Session:
    return generate_user(mimic_profile(attacker, victim, fidelity), script, sample_rate_hz, session_seed)


def drifted_profile(profile: UserProfile, toward: UserProfile, amount: float) -> UserProfile:
    """Behavioural drift: the same person, parameters moved toward ``toward``."""
    p = mimic_profile(profile, toward, amount)
    return UserProfile(profile.user_id, p.params, profile.seed)
