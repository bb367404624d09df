"""Server simulator exposing the ITR-delay and DVFS knobs."""

from .engine import (OsProfile, PowerModel, SimResult, SizeDistribution, Unstable, WorkloadSpec,
                     run_sim)
from .governors import (AdaptiveItrHook, AdaptiveItrPolicy, OndemandHook, adaptive_itr_step,
                        ondemand_governor_step)
from .sweep import (SweepRow, pareto_frontier, repetition_seed, sweep, sweep_row,
                    write_sweep_csv, write_sweep_json)

__all__ = [
    "OsProfile", "PowerModel", "SimResult", "SizeDistribution", "Unstable", "WorkloadSpec",
    "run_sim", "AdaptiveItrHook", "AdaptiveItrPolicy", "OndemandHook", "adaptive_itr_step",
    "ondemand_governor_step", "SweepRow", "pareto_frontier", "repetition_seed", "sweep",
    "sweep_row", "write_sweep_csv", "write_sweep_json",
]
