"""Discrete-event simulation of a single-core network server.

The NIC raises an interrupt no sooner than ``itr`` microseconds after the
previous one and no sooner than the first pending arrival. Each interrupt
pays a fixed overhead, then drains every packet/request that has arrived by
the time processing starts, run-to-completion. Elapsed time for ``c`` cycles
at ``f`` GHz is ``c / (f * 1e9)`` seconds.

Times inside the engine are seconds; latencies are reported in microseconds.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import Config, ConfigError

DEFAULT_QUEUE_CAP = 1_000_000


class Unstable(RuntimeError):
    """Offered load exceeded what the configuration can drain."""

    def __init__(self, config: Config, queued: int):
        super().__init__(f"unstable: offered load exceeds capacity at {config} ({queued} queued)")
        self.config = config
        self.queued = queued


@dataclass(frozen=True)
class OsProfile:
    name: str
    per_interrupt_cycles: int
    per_request_cycles: int
    per_kb_cycles: int = 0

    def __post_init__(self):
        if self.per_interrupt_cycles <= 0 or self.per_request_cycles <= 0:
            raise ConfigError(f"OS profile {self.name}: cycle counts must be positive")
        if self.per_kb_cycles < 0:
            raise ConfigError(f"OS profile {self.name}: per_kb_cycles must be >= 0")

    def scaled(self, factor: float, name: str) -> "OsProfile":
        return OsProfile(name, max(1, round(self.per_interrupt_cycles * factor)),
                         max(1, round(self.per_request_cycles * factor)),
                         round(self.per_kb_cycles * factor))


@dataclass(frozen=True)
class PowerModel:
    """Package power: p_idle + k_dyn * f**exponent while busy, p_idle idle, p_sleep asleep."""

    p_idle: float = 11.0
    k_dyn: float = 1.0
    exponent: float = 3.0
    sleep_enabled: bool = False
    p_sleep: float = 2.0
    sleep_entry_idle_us: float = 50.0
    wake_latency_us: float = 20.0

    def __post_init__(self):
        if self.p_idle < 0 or self.k_dyn <= 0:
            raise ConfigError("power model needs p_idle >= 0 and k_dyn > 0")
        if not 0 <= self.p_sleep <= self.p_idle:
            raise ConfigError("power model needs 0 <= p_sleep <= p_idle")
        if self.wake_latency_us < 0 or self.sleep_entry_idle_us < 0:
            raise ConfigError("sleep timings must be non-negative")

    def active_power(self, f_ghz: float) -> float:
        return self.p_idle + self.k_dyn * f_ghz ** self.exponent


@dataclass(frozen=True)
class SizeDistribution:
    """Request payload size in KB: ``fixed`` or ``uniform`` over [low, high]."""

    kind: str = "uniform"
    low: float = 0.001
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "fixed"):
            raise ConfigError(f"unknown size distribution {self.kind!r}")
        if self.low < 0 or self.high < self.low:
            raise ConfigError("size distribution needs 0 <= low <= high")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(n, self.low)
        return rng.uniform(self.low, self.high, size=n)

    @property
    def mean(self) -> float:
        return self.low if self.kind == "fixed" else 0.5 * (self.low + self.high)


@dataclass(frozen=True)
class WorkloadSpec:
    mode: str = "open"
    qps: float = 20_000.0
    message_kb: float = 64.0
    request_kb: SizeDistribution = field(default_factory=SizeDistribution)
    duration_s: float = 0.25
    seed: int = 0
    # closed mode: number of ping-pong rounds (None: run for duration_s)
    rounds: int | None = None
    link_gbps: float = 10.0
    mtu_kb: float = 1.5

    def __post_init__(self):
        if self.mode not in ("open", "closed"):
            raise ConfigError(f"workload mode must be open or closed, got {self.mode!r}")
        if self.mode == "open" and not self.qps > 0:
            raise ConfigError("open workload needs qps > 0")
        if self.mode == "closed" and not self.message_kb > 0:
            raise ConfigError("closed workload needs message_kb > 0")
        if not self.duration_s > 0:
            raise ConfigError("workload duration_s must be positive")
        if self.rounds is not None and self.rounds <= 0:
            raise ConfigError("rounds must be positive")

    def with_(self, **changes) -> "WorkloadSpec":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass
class SimResult:
    latency_samples: np.ndarray
    energy_joules: float
    interrupt_count: int
    instructions_proxy: int
    busy_seconds: float
    idle_seconds: float
    sleep_seconds: float
    elapsed_seconds: float
    throughput: float
    requests: int
    busy_energy_joules: float = 0.0
    timeline: list | None = None
    itr_trace: list | None = None

    @property
    def watts(self) -> float:
        return self.energy_joules / self.elapsed_seconds

    def fingerprint(self) -> tuple:
        return (self.latency_samples.tobytes(), self.energy_joules, self.interrupt_count,
                self.instructions_proxy, self.busy_seconds, self.idle_seconds,
                self.sleep_seconds, self.elapsed_seconds)


# Knob hooks let governors move DVFS / ITR during a run. Each is called as
# hook(now_s, engine_state) at interrupt boundaries and returns a new value or None.
KnobHook = Callable[[float, "EngineState"], float | None]


@dataclass
class EngineState:
    f_ghz: float
    itr_s: float
    busy_s: float = 0.0
    bytes_in: float = 0.0
    pkts_in: int = 0


class _Accountant:
    """Tracks time in each power state; optionally records the state timeline."""

    def __init__(self, power: PowerModel, record: bool):
        self.power = power
        self.busy = self.idle = self.sleep = 0.0
        self.busy_energy = 0.0
        self.timeline = [] if record else None

    def _seg(self, t0, t1, state, watts):
        if self.timeline is not None and t1 > t0:
            self.timeline.append((t0, t1, state, watts))

    def gap(self, t0: float, t1: float, wake: bool = True) -> float:
        """Account an idle gap [t0, t1); returns the wake delay to add after t1.

        With ``wake=False`` (end of run) the core may still sleep but never wakes.
        """
        g = t1 - t0
        if g <= 0:
            return 0.0
        p = self.power
        entry = p.sleep_entry_idle_us * 1e-6
        if p.sleep_enabled and g > entry:
            wake_s = p.wake_latency_us * 1e-6 if wake else 0.0
            self.idle += entry + wake_s
            self.sleep += g - entry
            self._seg(t0, t0 + entry, "idle", p.p_idle)
            self._seg(t0 + entry, t1, "sleep", p.p_sleep)
            self._seg(t1, t1 + wake_s, "idle", p.p_idle)
            return wake_s
        self.idle += g
        self._seg(t0, t1, "idle", p.p_idle)
        return 0.0

    def busy_span(self, t0: float, t1: float, f_ghz: float):
        watts = self.power.active_power(f_ghz)
        self.busy += t1 - t0
        self.busy_energy += (t1 - t0) * watts
        self._seg(t0, t1, "busy", watts)

    def energy(self) -> float:
        p = self.power
        return self.busy_energy + self.idle * p.p_idle + self.sleep * p.p_sleep


def run_sim(workload: WorkloadSpec, config: Config, os: OsProfile, power: PowerModel,
            *, queue_cap: int = DEFAULT_QUEUE_CAP, dvfs_hook: KnobHook | None = None,
            itr_hook: KnobHook | None = None, record_timeline: bool = False,
            record_itr: bool = False) -> SimResult:
    """Simulate one run of `workload` at a fixed (or governor-driven) configuration."""
    if workload.mode == "open":
        return _run_open(workload, config, os, power, queue_cap, dvfs_hook, itr_hook,
                         record_timeline, record_itr)
    return _run_closed(workload, config, os, power, queue_cap, dvfs_hook, itr_hook,
                       record_timeline, record_itr)


def _arrivals(workload: WorkloadSpec, rng: np.random.Generator) -> np.ndarray:
    rate = workload.qps
    horizon = workload.duration_s
    expected = rate * horizon
    chunk = int(expected + 6 * math.sqrt(expected) + 16)
    gaps = rng.exponential(1.0 / rate, size=chunk)
    t = np.cumsum(gaps)
    while t[-1] < horizon:
        more = np.cumsum(rng.exponential(1.0 / rate, size=chunk)) + t[-1]
        t = np.concatenate([t, more])
    return t[t < horizon]


def _apply_hooks(now, st, dvfs_hook, itr_hook):
    if dvfs_hook is not None:
        nf = dvfs_hook(now, st)
        if nf is not None:
            st.f_ghz = nf
    if itr_hook is not None:
        ni = itr_hook(now, st)
        if ni is not None:
            st.itr_s = ni * 1e-6


def _run_open(workload, config, os, power, queue_cap, dvfs_hook, itr_hook, record, record_itr):
    rng = np.random.default_rng(workload.seed)
    arr_np = _arrivals(workload, rng)
    sizes_np = workload.request_kb.sample(rng, arr_np.size)
    arr = arr_np.tolist()
    n = len(arr)
    req_cycles = (os.per_request_cycles + os.per_kb_cycles * sizes_np).tolist()
    sizes = sizes_np.tolist()
    lat = [0.0] * n

    st = EngineState(f_ghz=config.dvfs_ghz, itr_s=config.itr_us * 1e-6)
    acct = _Accountant(power, record)
    itr_trace = [] if record_itr else None
    int_cycles = os.per_interrupt_cycles
    cycles_total = 0.0
    interrupts = 0
    last_fire = -math.inf
    busy_end = 0.0
    i = 0
    while i < n:
        a = arr[i]
        fire = last_fire + st.itr_s
        if a > fire:
            fire = a
        start = fire if fire > busy_end else busy_end
        start += acct.gap(busy_end, start)
        _apply_hooks(start, st, dvfs_hook, itr_hook)
        if itr_trace is not None:
            itr_trace.append((start, st.itr_s * 1e6))
        j = bisect_right(arr, start, i)
        if j - i > queue_cap:
            raise Unstable(config, j - i)
        hz = st.f_ghz * 1e9
        c = int_cycles
        t = start + int_cycles / hz
        for k in range(i, j):
            ck = req_cycles[k]
            c += ck
            t += ck / hz
            lat[k] = (t - arr[k]) * 1e6
            st.bytes_in += sizes[k] * 1024.0
        st.pkts_in += j - i
        acct.busy_span(start, t, st.f_ghz)
        st.busy_s += t - start
        cycles_total += c
        interrupts += 1
        last_fire = fire
        busy_end = t
        i = j
    end = max(workload.duration_s, busy_end)
    acct.gap(busy_end, end, wake=False)
    return SimResult(
        latency_samples=np.asarray(lat),
        energy_joules=acct.energy(),
        interrupt_count=interrupts,
        instructions_proxy=int(round(cycles_total)),
        busy_seconds=acct.busy,
        idle_seconds=acct.idle,
        sleep_seconds=acct.sleep,
        elapsed_seconds=end,
        throughput=n / end,
        requests=n,
        busy_energy_joules=acct.busy_energy,
        timeline=acct.timeline,
        itr_trace=itr_trace,
    )


def _run_closed(workload, config, os, power, queue_cap, dvfs_hook, itr_hook, record, record_itr):
    """Ping-pong: one message in flight; the client half mirrors the server half."""
    st = EngineState(f_ghz=config.dvfs_ghz, itr_s=config.itr_us * 1e-6)
    acct = _Accountant(power, record)
    itr_trace = [] if record_itr else None
    n_pkts = max(1, math.ceil(workload.message_kb / workload.mtu_kb - 1e-9))
    pkt_kb = workload.message_kb / n_pkts
    wire = workload.mtu_kb * 1024 * 8 / (workload.link_gbps * 1e9)
    pkt_cycles = os.per_kb_cycles * pkt_kb
    int_cycles = os.per_interrupt_cycles
    rounds_cap = workload.rounds

    t0 = 0.0
    last_fire = -math.inf
    busy_end = 0.0
    cycles_total = 0.0
    interrupts = 0
    rtts = []
    while True:
        if rounds_cap is not None and len(rtts) >= rounds_cap:
            break
        if rounds_cap is None and t0 >= workload.duration_s:
            break
        arrivals = [t0 + (p + 1) * wire for p in range(n_pkts)]
        i = 0
        done = t0
        while i < n_pkts:
            fire = max(last_fire + st.itr_s, arrivals[i])
            start = max(fire, busy_end)
            start += acct.gap(busy_end, start)
            _apply_hooks(start, st, dvfs_hook, itr_hook)
            if itr_trace is not None:
                itr_trace.append((start, st.itr_s * 1e6))
            j = bisect_right(arrivals, start, i)
            if j - i > queue_cap:
                raise Unstable(config, j - i)
            c = int_cycles + pkt_cycles * (j - i)
            if j == n_pkts:
                c += os.per_request_cycles
            t = start + c / (st.f_ghz * 1e9)
            st.bytes_in += pkt_kb * 1024.0 * (j - i)
            st.pkts_in += j - i
            acct.busy_span(start, t, st.f_ghz)
            st.busy_s += t - start
            cycles_total += c
            interrupts += 1
            last_fire = fire
            busy_end = t
            i = j
            done = t
        half = done - t0
        rtts.append(2.0 * half * 1e6)
        t0 += 2.0 * half
    end = t0
    acct.gap(busy_end, end, wake=False)
    total_kb = workload.message_kb * len(rtts)
    return SimResult(
        latency_samples=np.asarray(rtts),
        energy_joules=acct.energy(),
        interrupt_count=interrupts,
        instructions_proxy=int(round(cycles_total)),
        busy_seconds=acct.busy,
        idle_seconds=acct.idle,
        sleep_seconds=acct.sleep,
        elapsed_seconds=end,
        throughput=total_kb / 1024.0 / end,
        requests=len(rtts),
        busy_energy_joules=acct.busy_energy,
        timeline=acct.timeline,
        itr_trace=itr_trace,
    )
