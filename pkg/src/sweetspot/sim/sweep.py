"""Static (ITR-delay, DVFS) sweeps, Pareto filtering and sweep file output."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Iterable, Sequence

import numpy as np

from ..core import Config, ConfigSpace, Measurement, SlaObjective, enumerate_grid, meets_sla, \
    nearest_rank_percentile
from ..seeding import derive_seed
from .engine import DEFAULT_QUEUE_CAP, OsProfile, PowerModel, Unstable, WorkloadSpec, run_sim

log = logging.getLogger(__name__)

SWEEP_CSV_COLUMNS = ("itr_us", "dvfs_ghz", "tail_latency_us", "energy_j", "sla_ok", "interrupts",
                     "instructions_proxy", "elapsed_s", "status")


@dataclass(frozen=True)
class SweepRow:
    config: Config
    measurement: Measurement | None
    sla_ok: bool
    interrupts: int = 0
    instructions_proxy: int = 0
    elapsed_s: float = math.nan
    status: str = "ok"

    @property
    def tail_latency_us(self) -> float:
        return self.measurement.tail_latency_us if self.measurement else math.inf

    @property
    def energy_j(self) -> float:
        return self.measurement.energy_joules if self.measurement else math.inf


def repetition_seed(root_seed: int, repetition: int) -> int:
    """Seed for one repetition. Shared by every config so sweeps compare under
    common random numbers; a single row is reproducible from (root_seed, rep)."""
    return derive_seed(root_seed, "sweep", repetition)


def sweep_row(config: Config, workload: WorkloadSpec, os: OsProfile, power: PowerModel,
              sla: SlaObjective, repetitions: int = 1, root_seed: int = 0,
              queue_cap: int = DEFAULT_QUEUE_CAP) -> SweepRow:
    """Run one config `repetitions` times and aggregate: mean energy, percentile of pooled latency."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    samples, energies, elapsed = [], [], []
    interrupts = instructions = requests = 0
    try:
        for rep in range(repetitions):
            wl = workload.with_(seed=repetition_seed(root_seed, rep))
            res = run_sim(wl, config, os, power, queue_cap=queue_cap)
            samples.append(res.latency_samples)
            energies.append(res.energy_joules)
            elapsed.append(res.elapsed_seconds)
            interrupts += res.interrupt_count
            instructions += res.instructions_proxy
            requests += res.requests
    except Unstable as exc:
        log.warning("%s", exc)
        return SweepRow(config, None, False, status="unstable")
    pooled = np.concatenate(samples)
    if pooled.size == 0:
        return SweepRow(config, None, False, status="no-requests")
    m = Measurement(
        tail_latency_us=nearest_rank_percentile(pooled, sla.percentile),
        energy_joules=float(np.mean(energies)),
        window_seconds=float(np.mean(elapsed)),
        observed_qps=requests / float(np.sum(elapsed)),
    )
    return SweepRow(config, m, meets_sla(m, sla), interrupts // repetitions,
                    instructions // repetitions, float(np.mean(elapsed)))


def sweep(configs: ConfigSpace | Iterable[Config], workload: WorkloadSpec, os: OsProfile,
          power: PowerModel, sla: SlaObjective, repetitions: int = 1, root_seed: int = 0,
          jobs: int = 1, queue_cap: int = DEFAULT_QUEUE_CAP) -> list[SweepRow]:
    """Sweep every config; rows come back in input order whatever the worker count."""
    if isinstance(configs, ConfigSpace):
        configs = enumerate_grid(configs)
    configs = list(configs)
    fn = partial(sweep_row, workload=workload, os=os, power=power, sla=sla,
                 repetitions=repetitions, root_seed=root_seed, queue_cap=queue_cap)
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, configs, chunksize=max(1, len(configs) // (4 * jobs))))
    return [fn(c) for c in configs]


def _dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def pareto_frontier(rows: Sequence[SweepRow], objectives: Sequence[str] = ("tail_latency_us", "energy_j"),
                    sla_filter: bool = True) -> list[SweepRow]:
    """Rows not dominated in both objectives (minimized), after dropping SLA violators.

    Exact duplicates do not dominate each other, so all copies are kept.
    Output preserves input order.
    """
    if not rows:
        raise ValueError("pareto_frontier needs at least one row")
    a, b = objectives
    pool = [(k, r) for k, r in enumerate(rows)
            if r.measurement is not None and (r.sla_ok or not sla_filter)]
    if not pool:
        log.warning("pareto frontier empty: every row violates the SLA")
        return []
    pool.sort(key=lambda kr: (getattr(kr[1], a), getattr(kr[1], b)))
    keep = []
    best_b = math.inf
    best_pt = None
    for k, r in pool:
        pt = (getattr(r, a), getattr(r, b))
        if pt[1] < best_b:
            keep.append(k)
            best_b, best_pt = pt[1], pt
        elif pt == best_pt:
            keep.append(k)
    return [rows[k] for k in sorted(keep)]


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def sweep_records(rows: Sequence[SweepRow]) -> list[dict]:
    out = []
    for r in rows:
        m = r.measurement
        out.append({
            "itr_us": r.config.itr_us,
            "dvfs_ghz": r.config.dvfs_ghz,
            "tail_latency_us": m.tail_latency_us if m else math.nan,
            "energy_j": m.energy_joules if m else math.nan,
            "sla_ok": r.sla_ok,
            "interrupts": r.interrupts,
            "instructions_proxy": r.instructions_proxy,
            "elapsed_s": r.elapsed_s,
            "status": r.status,
        })
    return out


def write_sweep_csv(path, rows: Sequence[SweepRow]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_CSV_COLUMNS)
        for rec in sweep_records(rows):
            w.writerow([_fmt(rec[c]) for c in SWEEP_CSV_COLUMNS])


def write_sweep_json(path, rows: Sequence[SweepRow]):
    recs = sweep_records(rows)
    for rec in recs:
        for k, v in rec.items():
            if isinstance(v, float) and not math.isfinite(v):
                rec[k] = None
    with open(path, "w") as fh:
        json.dump(recs, fh, indent=1, sort_keys=True)
        fh.write("\n")
