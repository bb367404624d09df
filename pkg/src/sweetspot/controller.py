"""The live tuning loop: trigger, search, settle, hold.

On each trigger the controller runs a Bayesian-optimization search on the
live system (every trial is a real measurement window, so searching costs
energy), applies the winner and then holds it fixed, logging periodic
measurements, until the next trigger.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

from .bayopt import BayOpConfig, Trial, run_bayopt
from .core import Config, ConfigError, ConfigSpace, Measurement, SlaObjective, meets_sla

log = logging.getLogger(__name__)

EVENTS = ("tune_start", "tune_trial", "settled", "hold")
TIMELINE_CSV_COLUMNS = ("t_s", "event", "itr_us", "dvfs_ghz", "tail_latency_us", "energy_j", "watts",
                        "span_s", "note")
_EPS = 1e-9


@dataclass(frozen=True)
class TriggerPolicy:
    kind: str = "periodic"
    period_s: float = 3600.0
    delta_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in ("periodic", "load_delta"):
            raise ConfigError(f"trigger kind must be periodic or load_delta, got {self.kind!r}")
        if self.kind == "periodic" and not self.period_s > 0:
            raise ConfigError("periodic trigger needs period_s > 0")
        if self.kind == "load_delta" and not self.delta_fraction > 0:
            raise ConfigError("load_delta trigger needs delta_fraction > 0")


def trigger_check(policy: TriggerPolicy, now_s: float, last_tune_s: float,
                  qps_now: float, qps_at_last_tune: float) -> bool:
    if now_s < last_tune_s:
        raise ValueError("time went backwards")
    if policy.kind == "periodic":
        return now_s - last_tune_s >= policy.period_s - _EPS
    if qps_at_last_tune <= 0:
        return qps_now > 0
    return abs(qps_now - qps_at_last_tune) / qps_at_last_tune > policy.delta_fraction


@dataclass(frozen=True)
class TimelineEntry:
    time_s: float
    event: str
    config: Config | None
    measurement: Measurement | None
    span_s: float = 0.0
    note: str = ""

    @property
    def energy_j(self) -> float:
        return self.measurement.energy_joules if self.measurement else 0.0


@dataclass
class ControllerTimeline:
    entries: list[TimelineEntry] = field(default_factory=list)
    name: str = ""

    def add(self, entry: TimelineEntry):
        if self.entries and entry.time_s < self.entries[-1].time_s - _EPS:
            raise ValueError("timeline entries must be chronological")
        self.entries.append(entry)

    def events(self, kind: str) -> list[TimelineEntry]:
        return [e for e in self.entries if e.event == kind]

    @property
    def total_joules(self) -> float:
        return sum(e.energy_j for e in self.entries)

    def violations(self, sla: SlaObjective, settled_only: bool = True) -> int:
        kinds = ("settled", "hold") if settled_only else ("settled", "hold", "tune_trial")
        return sum(1 for e in self.entries
                   if e.event in kinds and e.measurement is not None and not meets_sla(e.measurement, sla))

    def settled_configs(self) -> list[Config | None]:
        return [e.config for e in self.entries if e.event == "settled"]

    def check_structure(self, n_trials: int) -> bool:
        """Every tune_start is followed by exactly n_trials trials and one settled entry."""
        ev = [e.event for e in self.entries]
        for k, e in enumerate(ev):
            if e == "tune_start":
                block = ev[k + 1:k + 2 + n_trials]
                if block != ["tune_trial"] * n_trials + ["settled"]:
                    return False
        return True

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMELINE_CSV_COLUMNS)
            for e in self.entries:
                m = e.measurement
                w.writerow([
                    repr(e.time_s), e.event,
                    e.config.itr_us if e.config else "",
                    repr(e.config.dvfs_ghz) if e.config else "",
                    repr(m.tail_latency_us) if m else "",
                    repr(m.energy_joules) if m else "",
                    repr(m.watts) if m else "",
                    repr(e.span_s), e.note,
                ])


def _measure(system, window_s: float):
    try:
        return system.measure(window_s), ""
    except Exception as exc:
        log.warning("measurement failed on %s: %s", system.describe(), exc)
        return None, f"measurement-failed: {exc}"


def control_loop(system, sla: SlaObjective, trigger: TriggerPolicy, bayop_cfg: BayOpConfig,
                 horizon_s: float, space: ConfigSpace, log_period_s: float = 600.0,
                 sla_headroom: float = 0.0, start_s: float = 0.0) -> ControllerTimeline:
    """Run the tune/hold cycle from `start_s` until `horizon_s` of simulated time.

    The search scores trials against the SLA bound tightened by `sla_headroom`;
    settled-window violations are always judged against the real bound.
    """
    search_sla = sla.tightened(sla_headroom)
    timeline = ControllerTimeline(name=system.describe())
    t = start_s
    last_tune: float | None = None
    qps_at_tune = 0.0
    qps_now = 0.0
    current: Config | None = None

    while t < horizon_s - _EPS:
        due = last_tune is None or trigger_check(trigger, t, last_tune, qps_now, qps_at_tune)
        if due:
            last_tune = t
            timeline.add(TimelineEntry(t, "tune_start", current, None))
            clock = [t]

            def on_trial(trial: Trial):
                timeline.add(TimelineEntry(clock[0], "tune_trial", trial.config, trial.measurement,
                                           bayop_cfg.trial_window_s,
                                           "" if trial.measurement else "trial-failed"))
                clock[0] += bayop_cfg.trial_window_s

            # Every tune period replays the same seed schedule, so identical load
            # gives identical decisions; only the load itself varies between periods.
            if hasattr(system, "begin_epoch"):
                system.begin_epoch()
            result = run_bayopt(system, search_sla, bayop_cfg, space, on_trial=on_trial)
            t = clock[0]
            note = ""
            if all(tr.failed for tr in result.trials):
                note = "degraded-tune"
                fallback = current or bayop_cfg.anchor(space)
                system.apply(fallback)
                current = fallback
            else:
                current = result.best
            window = _hold_window(trigger, t, last_tune, horizon_s, log_period_s)
            m, err = _measure(system, window)
            timeline.add(TimelineEntry(t, "settled", current, m, window, note or err))
            if m is not None:
                if not meets_sla(m, sla):
                    log.info("settled config %s violates SLA (%.1fus)", current, m.tail_latency_us)
                qps_at_tune = qps_now = m.observed_qps
            t += window
            continue
        window = _hold_window(trigger, t, last_tune, horizon_s, log_period_s)
        m, err = _measure(system, window)
        timeline.add(TimelineEntry(t, "hold", current, m, window, err))
        if m is not None:
            qps_now = m.observed_qps
        t += window
    return timeline


def _hold_window(trigger, t, last_tune, horizon_s, log_period_s) -> float:
    window = min(log_period_s, horizon_s - t)
    if trigger.kind == "periodic":
        window = min(window, last_tune + trigger.period_s - t)
    return max(window, _EPS) if window > 0 else log_period_s


def baseline_loop(system, horizon_s: float, log_period_s: float = 600.0,
                  start_s: float = 0.0) -> ControllerTimeline:
    """Hold-only timeline for a system whose knobs are left to its own governors."""
    timeline = ControllerTimeline(name=system.describe())
    t = start_s
    while t < horizon_s - _EPS:
        window = min(log_period_s, horizon_s - t)
        m, err = _measure(system, window)
        timeline.add(TimelineEntry(t, "hold", getattr(system, "config", None), m, window, err))
        t += window
    return timeline


def read_timeline_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


__all__ = [
    "TriggerPolicy", "trigger_check", "TimelineEntry", "ControllerTimeline", "control_loop",
    "baseline_loop", "read_timeline_csv", "EVENTS",
]
