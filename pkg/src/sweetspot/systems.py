"""Systems the controller can drive: apply a config, then measure a window.

``SimulatedSystem`` wraps the discrete-event simulator, ``ModelSystem``
evaluates the analytic model surface, and ``ReplaySystem`` serves canned
measurements (useful in tests). A real-host adapter would implement the same
three methods.
"""

from __future__ import annotations

from typing import Callable, Mapping, Protocol, runtime_checkable

from .core import Config, ConfigSpace, Measurement, SlaObjective, nearest_rank_percentile
from .model import ModelParams, floored_energy, predict_latency
from .seeding import derive_seed
from .sim.engine import DEFAULT_QUEUE_CAP, OsProfile, PowerModel, WorkloadSpec, run_sim
from .sim.governors import AdaptiveItrHook, AdaptiveItrPolicy, OndemandHook


@runtime_checkable
class SystemUnderControl(Protocol):
    def apply(self, config: Config) -> None: ...

    def measure(self, window_seconds: float) -> Measurement: ...

    def describe(self) -> str: ...


class SimulatedSystem:
    """Simulator-backed system with its own simulated clock.

    Each ``measure`` call simulates ``min(window, sim_window_s)`` seconds of
    traffic at the current offered load and extrapolates energy to the full
    window at the measured average power. When a knob is dynamic, the
    governor's last choice carries over between windows.
    """

    def __init__(self, workload: WorkloadSpec, os: OsProfile, power: PowerModel, space: ConfigSpace,
                 *, sla: SlaObjective = SlaObjective(), root_seed: int = 0,
                 load: Callable[[float], float] | None = None, sim_window_s: float = 0.25,
                 dynamic_dvfs: bool = False, dynamic_itr: bool = False,
                 ondemand_period_s: float = 0.01, itr_policy: AdaptiveItrPolicy = AdaptiveItrPolicy(),
                 itr_period_s: float = 0.001, queue_cap: int = DEFAULT_QUEUE_CAP, name: str = "sim"):
        self.workload = workload
        self.os = os
        self.power = power
        self.space = space
        self.sla = sla
        self.root_seed = root_seed
        self.load = load
        self.sim_window_s = sim_window_s
        self.dynamic_dvfs = dynamic_dvfs
        self.dynamic_itr = dynamic_itr
        self.ondemand_period_s = ondemand_period_s
        self.itr_policy = itr_policy
        self.itr_period_s = itr_period_s
        self.queue_cap = queue_cap
        self.name = name
        self.clock_s = 0.0
        self.config = Config(space.itr_values[0], space.f_max)
        self._gov_f = space.f_max
        self._gov_itr = itr_policy.latency_itr_us
        self._count = 0

    def describe(self) -> str:
        knobs = []
        if self.dynamic_dvfs:
            knobs.append("ondemand-dvfs")
        if self.dynamic_itr:
            knobs.append("adaptive-itr")
        return f"{self.name}[{self.os.name}{'+' + '+'.join(knobs) if knobs else ''}]"

    def apply(self, config: Config) -> None:
        self.config = self.space.validate(config)

    def begin_epoch(self):
        """Restart the measurement seed schedule (called at each tune start)."""
        self._count = 0

    def current_qps(self) -> float:
        return self.load(self.clock_s) if self.load else self.workload.qps

    def measure(self, window_seconds: float) -> Measurement:
        qps = self.current_qps()
        seed = derive_seed(self.root_seed, "measure", self._count)
        self._count += 1
        self.clock_s += window_seconds
        wl = self.workload.with_(qps=qps, seed=seed, duration_s=min(window_seconds, self.sim_window_s))
        itr = self._gov_itr if self.dynamic_itr else self.config.itr_us
        f = self._gov_f if self.dynamic_dvfs else self.config.dvfs_ghz
        dvfs_hook = OndemandHook(self.space, self.ondemand_period_s) if self.dynamic_dvfs else None
        itr_hook = AdaptiveItrHook(self.itr_policy, self.itr_period_s) if self.dynamic_itr else None
        res = run_sim(wl, Config(itr, f), self.os, self.power, queue_cap=self.queue_cap,
                      dvfs_hook=dvfs_hook, itr_hook=itr_hook)
        if dvfs_hook is not None and dvfs_hook.history:
            self._gov_f = dvfs_hook.history[-1][1]
        if itr_hook is not None and itr_hook.history:
            self._gov_itr = itr_hook.history[-1][1]
        tail = nearest_rank_percentile(res.latency_samples, self.sla.percentile) \
            if res.requests else 0.0
        return Measurement(tail, res.watts * window_seconds, window_seconds,
                           res.requests / res.elapsed_seconds)


class ModelSystem:
    """The analytic model surface as a deterministic system at a fixed request rate."""

    def __init__(self, params: ModelParams, space: ConfigSpace, qps: float = 1.0,
                 itr_floor_us: float = 1.0):
        self.params = params
        self.space = space
        self.qps = qps
        self.itr_floor_us = itr_floor_us
        self.config = Config(space.itr_values[0], space.f_max)

    def describe(self) -> str:
        return "model-surface"

    def apply(self, config: Config) -> None:
        self.config = self.space.validate(config)

    def evaluate(self, config: Config, window_seconds: float = 1.0) -> Measurement:
        tail = predict_latency(self.params, config)
        energy = floored_energy(self.params, config, self.itr_floor_us) * self.qps * window_seconds
        return Measurement(tail, energy, window_seconds, self.qps)

    def measure(self, window_seconds: float) -> Measurement:
        return self.evaluate(self.config, window_seconds)


class ReplaySystem:
    """Serves pre-recorded measurements keyed by config; unknown configs raise KeyError."""

    def __init__(self, table: Mapping[Config, Measurement], name: str = "replay"):
        self.table = dict(table)
        self.name = name
        self.config: Config | None = None
        self.applied: list[Config] = []

    def describe(self) -> str:
        return self.name

    def apply(self, config: Config) -> None:
        self.config = config
        self.applied.append(config)

    def measure(self, window_seconds: float) -> Measurement:
        m = self.table[self.config]
        scale = window_seconds / m.window_seconds
        return Measurement(m.tail_latency_us, m.energy_joules * scale, window_seconds, m.observed_qps)
