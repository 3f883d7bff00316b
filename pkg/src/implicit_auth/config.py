"""Run configuration: default operating point, JSON file + flag overrides."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .sensors import ValidationError

RESULTS_ENV = "IMPLICIT_AUTH_RESULTS"


@dataclass
class Config:
    sample_rate_hz: float = 50.0
    window_s: float = 6.0
    data_size: int = 800
    rho: float = 1.0
    alpha: float = 0.05
    corr_threshold: float = 0.85
    epsilon_cs: float = 0.2
    T_windows: int = 100
    lockout_after: int = 1
    seed: int = 0
    data_dir: str = "data"
    model_dir: str = "models"
    results_dir: str = "results"

    def validate(self) -> "Config":
        checks = {
            "sample_rate_hz": self.sample_rate_hz > 0,
            "window_s": self.window_s > 0,
            "data_size": self.data_size >= 20,
            "rho": self.rho > 0,
            "alpha": 0 < self.alpha < 1,
            "corr_threshold": 0 < self.corr_threshold <= 1,
            "epsilon_cs": self.epsilon_cs > 0,
            "T_windows": self.T_windows >= 1,
            "lockout_after": self.lockout_after >= 1,
        }
        for name, ok in checks.items():
            if not ok:
                raise ValidationError(f"config field {name!r} out of range: {getattr(self, name)!r}")
        return self

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "Config":
        values: dict = {}
        if path:
            values.update(json.loads(Path(path).read_text(encoding="utf-8")))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ValidationError(f"unknown config key {unknown[0]!r}")
        typed = {}
        for k, v in values.items():
            kind = known[k].type
            try:
                typed[k] = int(v) if kind == "int" else float(v) if kind == "float" else str(v)
            except (TypeError, ValueError):
                raise ValidationError(f"config field {k!r} has invalid value {v!r}") from None
        cfg = cls(**typed)
        env = os.environ.get(RESULTS_ENV)
        if env and (overrides or {}).get("results_dir") is None:
            cfg.results_dir = env
        return cfg.validate()

    def to_dict(self) -> dict:
        return asdict(self)
