"""Diurnal load traces: parsing, hourly binning, scaling and multi-system replay."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bayopt import BayOpConfig
from .controller import ControllerTimeline, TriggerPolicy, baseline_loop, control_loop
from .core import ConfigError, ConfigSpace, SlaObjective
from .seeding import derive_seed
from .sim.engine import OsProfile, PowerModel, WorkloadSpec
from .sim.governors import AdaptiveItrPolicy
from .systems import SimulatedSystem

log = logging.getLogger(__name__)


class TraceError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class TraceRecord:
    timestamp_s: float
    qps: float


@dataclass(frozen=True)
class ParsedTrace:
    records: list[TraceRecord]
    malformed: int


def parse_trace(path, time_column: str = "timestamp_s", qps_column: str = "qps") -> ParsedTrace:
    """Read a trace CSV; rows that fail to parse are skipped and counted."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or time_column not in reader.fieldnames \
                    or qps_column not in reader.fieldnames:
                raise TraceError(f"{path}: header must contain {time_column!r} and {qps_column!r}")
            records, bad = [], 0
            for row in reader:
                try:
                    t, q = float(row[time_column]), float(row[qps_column])
                except (TypeError, ValueError):
                    bad += 1
                    continue
                if not (math.isfinite(t) and math.isfinite(q)) or t < 0 or q < 0:
                    bad += 1
                    continue
                records.append(TraceRecord(t, q))
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc}") from exc
    if bad:
        log.warning("%s: skipped %d malformed row(s)", path, bad)
    if not records:
        raise TraceError(f"{path}: no valid rows")
    records.sort()
    return ParsedTrace(records, bad)


def write_trace_csv(path, records: Sequence[TraceRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("timestamp_s", "qps"))
        for r in records:
            w.writerow((repr(r.timestamp_s), repr(r.qps)))


@dataclass(frozen=True)
class BinnedTrace:
    bin_seconds: float
    means: tuple[float, ...]
    filled: tuple[bool, ...] = ()

    def __post_init__(self):
        if not self.bin_seconds > 0:
            raise TraceError("bin_seconds must be positive")
        if not self.means:
            raise TraceError("binned trace has no bins")
        if any(not math.isfinite(m) or m < 0 for m in self.means):
            raise TraceError("bin means must be finite and non-negative")
        object.__setattr__(self, "means", tuple(float(m) for m in self.means))
        object.__setattr__(self, "filled", tuple(self.filled) or (False,) * len(self.means))

    @property
    def bins(self) -> list[tuple[int, float]]:
        return list(enumerate(self.means))

    @property
    def horizon_s(self) -> float:
        return self.bin_seconds * len(self.means)

    def qps_at(self, t_s: float) -> float:
        k = min(max(int(t_s // self.bin_seconds), 0), len(self.means) - 1)
        return self.means[k]

    def fingerprint(self) -> str:
        blob = json.dumps([repr(self.bin_seconds), [repr(m) for m in self.means]])
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def bin_hourly(records: Sequence[TraceRecord], bin_seconds: float = 3600.0) -> BinnedTrace:
    """Mean qps per bin [k*bin, (k+1)*bin); empty bins carry the previous mean forward (flagged)."""
    if not records:
        raise TraceError("bin_hourly needs at least one record")
    if not bin_seconds > 0:
        raise TraceError("bin_seconds must be positive")
    n = int(max(r.timestamp_s for r in records) // bin_seconds) + 1
    sums = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    for r in records:
        k = int(r.timestamp_s // bin_seconds)
        sums[k] += r.qps
        counts[k] += 1
    first = int(np.argmax(counts > 0))
    means, filled = [], []
    prev = sums[first] / counts[first]
    for k in range(n):
        if counts[k]:
            prev = sums[k] / counts[k]
            filled.append(False)
        else:
            filled.append(True)
        means.append(float(prev))
    if any(filled):
        log.warning("trace has %d empty bin(s), filled from neighbours", sum(filled))
    return BinnedTrace(bin_seconds, tuple(means), tuple(filled))


def scale_trace(binned: BinnedTrace, target_qps: float, mode: str = "peak") -> BinnedTrace:
    """Rescale so the peak (or the mean, with mode="mean") equals `target_qps`."""
    if not target_qps > 0:
        raise TraceError("target qps must be positive")
    if mode == "peak":
        ref = max(binned.means)
    elif mode == "mean":
        ref = float(np.mean(binned.means))
    else:
        raise TraceError(f"scale mode must be peak or mean, got {mode!r}")
    if not ref > 0:
        raise TraceError("cannot scale an all-zero trace")
    factor = target_qps / ref
    return BinnedTrace(binned.bin_seconds, tuple(m * factor for m in binned.means), binned.filled)


def synthetic_diurnal(n_bins: int = 24, bin_seconds: float = 3600.0, base: float = 0.55,
                      amplitude: float = 0.4, noise: float = 0.03, peak_bin: float = 14.0,
                      samples_per_bin: int = 12, seed: int = 0) -> list[TraceRecord]:
    """A sinusoidal day with multiplicative noise, in arbitrary qps units (scale it afterwards)."""
    if n_bins < 1 or samples_per_bin < 1:
        raise TraceError("need at least one bin and one sample per bin")
    if amplitude < 0 or base - amplitude <= 0:
        raise TraceError("synthetic trace must stay positive: need base > amplitude >= 0")
    rng = np.random.default_rng(derive_seed(seed, "diurnal"))
    step = bin_seconds / samples_per_bin
    out = []
    for k in range(n_bins * samples_per_bin):
        t = k * step
        phase = 2 * math.pi * (t / bin_seconds - peak_bin) / n_bins
        q = (base + amplitude * math.cos(phase)) * (1 + noise * rng.standard_normal())
        out.append(TraceRecord(t, max(q, 0.0)))
    return out


@dataclass(frozen=True)
class SystemSpec:
    """One replayed system: stock governors (mode="baseline") or the tuning controller."""

    name: str
    mode: str = "bayop"
    os: str = "linux"
    knobs: str = "both"

    def __post_init__(self):
        if self.mode not in ("baseline", "bayop"):
            raise ConfigError(f"system {self.name}: mode must be baseline or bayop")
        if self.knobs not in ("both", "itr_only", "dvfs_only"):
            raise ConfigError(f"system {self.name}: unknown knobs {self.knobs!r}")


DEFAULT_SYSTEMS = (
    SystemSpec("linux-default", "baseline", "linux"),
    SystemSpec("linux-bayop", "bayop", "linux", "both"),
    SystemSpec("linux-itr-bayop", "bayop", "linux", "itr_only"),
    SystemSpec("linux-dvfs-bayop", "bayop", "linux", "dvfs_only"),
    SystemSpec("specialized-bayop", "bayop", "specialized", "both"),
)


@dataclass(frozen=True)
class ReplaySettings:
    log_period_s: float = 600.0
    sim_window_s: float = 0.25
    sla_headroom: float = 0.1
    ondemand_period_s: float = 0.01
    itr_period_s: float = 0.001
    itr_policy: AdaptiveItrPolicy = field(default_factory=AdaptiveItrPolicy)


@dataclass
class SystemReplay:
    spec: SystemSpec
    timeline: ControllerTimeline
    summary: dict


def _summarize(spec: SystemSpec, timeline: ControllerTimeline, binned: BinnedTrace,
               sla: SlaObjective, fingerprint: str) -> dict:
    n = len(binned.means)
    joules = [0.0] * n
    flagged = set(k for k, f in enumerate(binned.filled) if f)
    for e in timeline.entries:
        k = min(int(e.time_s // binned.bin_seconds), n - 1)
        joules[k] += e.energy_j
        if e.note.startswith("measurement-failed") or e.note == "degraded-tune":
            flagged.add(k)
    return {
        "system": spec.name,
        "mode": spec.mode,
        "os": spec.os,
        "knobs": spec.knobs,
        "total_joules": timeline.total_joules,
        "violations": timeline.violations(sla, settled_only=True),
        "whole_window_violations": timeline.violations(sla, settled_only=False),
        "mean_watts_per_bin": [j / binned.bin_seconds for j in joules],
        "tune_events": len(timeline.events("tune_start")),
        "flagged_bins": sorted(flagged),
        "fingerprint": fingerprint,
    }


def replay_fingerprint(binned: BinnedTrace, sla: SlaObjective) -> str:
    blob = f"{binned.fingerprint()}|{sla.percentile!r}|{sla.bound_us!r}"
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def replay_system(spec: SystemSpec, binned: BinnedTrace, base_workload: WorkloadSpec,
                  os_profiles: dict[str, OsProfile], power: PowerModel, sla: SlaObjective,
                  bayop_cfg: BayOpConfig, space: ConfigSpace, root_seed: int = 0,
                  settings: ReplaySettings = ReplaySettings()) -> SystemReplay:
    if spec.os not in os_profiles:
        raise ConfigError(f"system {spec.name}: unknown OS profile {spec.os!r}")
    baseline = spec.mode == "baseline"
    system = SimulatedSystem(
        base_workload, os_profiles[spec.os], power, space, sla=sla, root_seed=root_seed,
        load=binned.qps_at, sim_window_s=settings.sim_window_s,
        dynamic_dvfs=baseline or spec.knobs == "itr_only",
        dynamic_itr=baseline or spec.knobs == "dvfs_only",
        ondemand_period_s=settings.ondemand_period_s, itr_policy=settings.itr_policy,
        itr_period_s=settings.itr_period_s, name=spec.name)
    if baseline:
        timeline = baseline_loop(system, binned.horizon_s, settings.log_period_s)
    else:
        cfg = BayOpConfig(**{**bayop_cfg.__dict__, "knobs": spec.knobs})
        trigger = TriggerPolicy("periodic", binned.bin_seconds)
        timeline = control_loop(system, sla, trigger, cfg, binned.horizon_s, space,
                                settings.log_period_s, settings.sla_headroom)
    timeline.name = spec.name
    return SystemReplay(spec, timeline, _summarize(spec, timeline, binned, sla,
                                                   replay_fingerprint(binned, sla)))


def _replay_one(args):
    return replay_system(*args)


def replay(binned: BinnedTrace, base_workload: WorkloadSpec, os_profiles: dict[str, OsProfile],
           power: PowerModel, sla: SlaObjective, bayop_cfg: BayOpConfig,
           systems: Sequence[SystemSpec] = DEFAULT_SYSTEMS, space: ConfigSpace | None = None,
           root_seed: int = 0, settings: ReplaySettings = ReplaySettings(),
           jobs: int = 1) -> list[SystemReplay]:
    """Replay the trace through every system. All systems see the same seed schedule."""
    space = space or ConfigSpace.default()
    names = [s.name for s in systems]
    if len(set(names)) != len(names):
        raise ConfigError("system names must be unique")
    tasks = [(s, binned, base_workload, os_profiles, power, sla, bayop_cfg, space, root_seed, settings)
             for s in systems]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            return list(pool.map(_replay_one, tasks))
    return [_replay_one(t) for t in tasks]


def compare_summaries(summaries: Sequence[dict], baseline: str) -> list[dict]:
    """Energy normalized to the named baseline system (baseline = 1.0)."""
    by_name = {s["system"]: s for s in summaries}
    if baseline not in by_name:
        raise KeyError(f"baseline system {baseline!r} not among summaries")
    prints = {s.get("fingerprint") for s in summaries}
    if len(prints) != 1:
        raise TraceError("summaries come from different traces or SLAs (fingerprint mismatch)")
    base = by_name[baseline]["total_joules"]
    if not base > 0:
        raise TraceError("baseline total energy must be positive")
    return [{"system": s["system"], "normalized_energy": s["total_joules"] / base,
             "total_joules": s["total_joules"], "violations": s["violations"],
             "whole_window_violations": s.get("whole_window_violations", s["violations"])}
            for s in summaries]
