"""Pulsed-load profiles and noisy load forecasts."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import LOAD_RATED_POWER, ConfigError

_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class Pulse:
    start: float  # s
    duration: float  # s
    height: float  # W


@dataclass(frozen=True)
class LoadProfileSpec:
    baseline: float  # W
    pulses: tuple = ()
    total_time: float = 10.0
    rated_power: float = LOAD_RATED_POWER

    def errors(self):
        out = []
        for i, p in enumerate(self.pulses):
            key = f"load.pulses[{i}]"
            if p.duration <= 0:
                out.append(("InvalidValue", key, "pulse duration must be positive"))
            if p.start < 0 or p.start + p.duration > self.total_time + _EDGE_TOL:
                out.append(("InvalidValue", key, "pulse must lie within [0, total_time]"))
            if self.baseline + p.height > self.rated_power:
                out.append(("InvalidValue", key,
                            "baseline + pulse height exceeds the load rated power"))
        if self.baseline < 0:
            out.append(("InvalidValue", "load.baseline", "baseline must be >= 0"))
        return out

    def validate(self):
        errs = self.errors()
        if errs:
            raise ConfigError(errs)
        return self


@dataclass(frozen=True)
class NoiseSpec:
    percent: float = 0.0
    seed: int = 0

    def errors(self):
        if not 0 <= self.percent <= 100:
            return [("InvalidValue", "noise.percent", "percent must lie in [0, 100]")]
        return []


def load_at(spec: LoadProfileSpec, t) -> np.ndarray:
    """Load power at time(s) ``t``: baseline plus every pulse active on [start, start+duration)."""
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, float(spec.baseline))
    for p in spec.pulses:
        active = (t >= p.start - _EDGE_TOL) & (t < p.start + p.duration - _EDGE_TOL)
        out = out + np.where(active, p.height, 0.0)
    return out


def generate_profile(spec: LoadProfileSpec, dt: float) -> np.ndarray:
    """Sample the load on the grid ``0, dt, 2*dt, ...`` covering ``total_time``."""
    n = int(round(spec.total_time / dt))
    return load_at(spec, np.arange(n) * dt)


@dataclass(frozen=True)
class TabulatedLoad:
    """Zero-order-hold load read from a two-column CSV (time_s, power_w)."""

    times: np.ndarray = field(repr=False)
    powers: np.ndarray = field(repr=False)

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        rows = []
        with path.open(newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    if rows:
                        raise
                    continue  # header line
        if not rows:
            raise ConfigError([("InvalidValue", "load.csv", f"no samples in {path}")])
        data = np.array(sorted(rows))
        return cls(data[:, 0], data[:, 1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t + _EDGE_TOL, side="right") - 1
        return self.powers[np.clip(idx, 0, len(self.powers) - 1)]


def inject_noise(series, noise: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Forecast ``p * (1 + eps)`` with i.i.d. Gaussian ``eps`` of std ``percent/100``.

    Negative forecasts are clamped to zero.
    """
    series = np.asarray(series, dtype=float)
    if noise.percent == 0:
        return series.copy()
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    eps = rng.normal(0.0, noise.percent / 100.0, size=series.shape)
    return np.maximum(series * (1.0 + eps), 0.0)


class WindowForecaster:
    """Per-solve forecast windows; one noise draw per EMS period, held over the horizon."""

    def __init__(self, load_fn, noise: NoiseSpec, seed: int | None = None):
        self.load_fn = load_fn
        self.sigma = noise.percent / 100.0
        self.rng = np.random.default_rng(noise.seed if seed is None else seed)

    def window(self, t: float, horizon: int, step_time: float) -> np.ndarray:
        actual = self.load_fn(t + np.arange(horizon) * step_time)
        if self.sigma == 0:
            return np.asarray(actual, dtype=float)
        eps = self.rng.normal(0.0, self.sigma)
        return np.maximum(actual * (1.0 + eps), 0.0)
