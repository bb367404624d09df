"""Domain types shared across the package: knob configurations, the
configuration grid, SLA objectives, measurements and percentile math.

Units are fixed everywhere: ITR-delay in microseconds, DVFS in GHz,
latency in microseconds, energy in joules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

DVFS_DECIMALS = 6


class ConfigError(ValueError):
    """A configuration value violates a domain invariant."""


def _round_ghz(value: float) -> float:
    return round(float(value), DVFS_DECIMALS)


@dataclass(frozen=True, order=True)
class Config:
    """An (ITR-delay, DVFS) knob pair."""

    itr_us: int
    dvfs_ghz: float

    def __post_init__(self):
        if not isinstance(self.itr_us, (int, np.integer)) or isinstance(self.itr_us, bool):
            raise ConfigError(f"itr_us must be an integer, got {self.itr_us!r}")
        if self.itr_us < 0:
            raise ConfigError(f"itr_us must be non-negative, got {self.itr_us}")
        if not math.isfinite(self.dvfs_ghz) or self.dvfs_ghz <= 0:
            raise ConfigError(f"dvfs_ghz must be positive, got {self.dvfs_ghz}")
        object.__setattr__(self, "itr_us", int(self.itr_us))
        object.__setattr__(self, "dvfs_ghz", _round_ghz(self.dvfs_ghz))

    def __str__(self):
        return f"(itr={self.itr_us}us, dvfs={self.dvfs_ghz:g}GHz)"


@dataclass(frozen=True)
class ConfigSpace:
    """The finite grid of ITR-delay values and DVFS p-states a controller may pick from."""

    itr_values: tuple[int, ...]
    dvfs_values: tuple[float, ...]
    itr_step: int = 2

    def __post_init__(self):
        itr = tuple(int(v) for v in self.itr_values)
        dvfs = tuple(_round_ghz(v) for v in self.dvfs_values)
        if not itr or not dvfs:
            raise ConfigError("config space needs at least one ITR and one DVFS value")
        if self.itr_step <= 0:
            raise ConfigError(f"itr_step must be positive, got {self.itr_step}")
        if any(b <= a for a, b in zip(itr, itr[1:])):
            raise ConfigError("itr_values must be strictly ascending and duplicate-free")
        if any(b <= a for a, b in zip(dvfs, dvfs[1:])):
            raise ConfigError("dvfs_values must be strictly ascending and duplicate-free")
        if itr[0] < 0:
            raise ConfigError("itr_values must be non-negative")
        bad = [v for v in itr if v % self.itr_step]
        if bad:
            raise ConfigError(f"itr_values not multiples of step {self.itr_step}: {bad[:5]}")
        if dvfs[0] <= 0:
            raise ConfigError("dvfs_values must be positive")
        object.__setattr__(self, "itr_values", itr)
        object.__setattr__(self, "dvfs_values", dvfs)

    @classmethod
    def from_ranges(cls, itr_min=0, itr_max=1024, itr_step=2,
                    dvfs_min=1.2, dvfs_max=3.0, dvfs_step=0.1) -> "ConfigSpace":
        itr = tuple(range(itr_min, itr_max + 1, itr_step))
        n_f = int(round((dvfs_max - dvfs_min) / dvfs_step)) + 1
        dvfs = tuple(_round_ghz(dvfs_min + k * dvfs_step) for k in range(n_f))
        return cls(itr, dvfs, itr_step)

    @classmethod
    def default(cls) -> "ConfigSpace":
        return cls.from_ranges()

    @property
    def itr_max(self) -> int:
        return self.itr_values[-1]

    @property
    def f_min(self) -> float:
        return self.dvfs_values[0]

    @property
    def f_max(self) -> float:
        return self.dvfs_values[-1]

    @property
    def size(self) -> int:
        return len(self.itr_values) * len(self.dvfs_values)

    def contains(self, config: Config) -> bool:
        return config.itr_us in self._itr_set and config.dvfs_ghz in self._dvfs_set

    def validate(self, config: Config) -> Config:
        if config.itr_us not in self._itr_set:
            raise ConfigError(f"ITR-delay {config.itr_us}us is not in the config space")
        if config.dvfs_ghz not in self._dvfs_set:
            raise ConfigError(f"DVFS {config.dvfs_ghz}GHz is not in the config space")
        return config

    @cached_property
    def _itr_set(self) -> frozenset:
        return frozenset(self.itr_values)

    @cached_property
    def _dvfs_set(self) -> frozenset:
        return frozenset(self.dvfs_values)

    def normalize(self, configs: Sequence[Config]) -> np.ndarray:
        """Min-max scale configs to [0, 1]^2 over the space (degenerate axes map to 0)."""
        itr = np.array([c.itr_us for c in configs], dtype=float)
        dvfs = np.array([c.dvfs_ghz for c in configs], dtype=float)
        return np.column_stack([
            _minmax(itr, self.itr_values[0], self.itr_values[-1]),
            _minmax(dvfs, self.dvfs_values[0], self.dvfs_values[-1]),
        ])

    def nearest_dvfs_at_least(self, target: float) -> float:
        for f in self.dvfs_values:
            if f >= target - 1e-12:
                return f
        return self.f_max


def _minmax(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def enumerate_grid(space: ConfigSpace) -> list[Config]:
    """Full cross product of the space, row-major in (itr, dvfs)."""
    return [Config(i, f) for i in space.itr_values for f in space.dvfs_values]


@dataclass(frozen=True)
class SlaObjective:
    """Tail-latency SLA: `percentile`% of requests complete in under `bound_us`."""

    percentile: float = 99.0
    bound_us: float = 500.0

    def __post_init__(self):
        if not 0 < self.percentile < 100:
            raise ConfigError(f"SLA percentile must be in (0, 100), got {self.percentile}")
        if not self.bound_us > 0:
            raise ConfigError(f"SLA bound must be positive, got {self.bound_us}")

    def tightened(self, headroom: float) -> "SlaObjective":
        """Same percentile with the bound reduced by a fractional headroom."""
        if not 0 <= headroom < 1:
            raise ConfigError(f"headroom must be in [0, 1), got {headroom}")
        return SlaObjective(self.percentile, self.bound_us * (1.0 - headroom))


@dataclass(frozen=True)
class Measurement:
    """Tail latency and energy observed over one measurement window."""

    tail_latency_us: float
    energy_joules: float
    window_seconds: float
    observed_qps: float = 0.0

    def __post_init__(self):
        for name in ("tail_latency_us", "energy_joules", "window_seconds", "observed_qps"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"measurement field {name} must be finite and >= 0, got {v}")
        if self.window_seconds <= 0:
            raise ConfigError("measurement window must be positive")

    @property
    def watts(self) -> float:
        return self.energy_joules / self.window_seconds


def nearest_rank_percentile(samples: Iterable[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample.

    >>> nearest_rank_percentile(range(1, 101), 99)
    99
    """
    arr = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples)
    n = arr.size
    if n == 0:
        raise ValueError("no samples")
    if not 0 < p < 100:
        raise ValueError(f"percentile must be in (0, 100), got {p}")
    # rounding guards against p*n/100 landing a hair above an integer
    rank = max(1, math.ceil(round(p * n / 100.0, 9)))
    value = np.partition(arr, rank - 1)[rank - 1]
    return value.item()


def meets_sla(m: Measurement, sla: SlaObjective) -> bool:
    return m.tail_latency_us < sla.bound_us
