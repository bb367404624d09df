"""Command-line entry point.

Exit codes: 0 success, 1 domain failure (overload, insufficient data,
fingerprint mismatch), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .bayopt import BayOpConfig, run_bayopt, write_trials_csv
from .config import ConfigFileError, ExperimentConfig, default_config, load_config
from .controller import control_loop
from .core import ConfigError
from .model import FitDiverged, InsufficientData, fit, initial_guess, prediction_table, read_fit_csv, \
    write_fit_json
from .sim.sweep import pareto_frontier, sweep, write_sweep_csv
from .systems import SimulatedSystem
from .trace import TraceError, bin_hourly, compare_summaries, parse_trace, replay, scale_trace, \
    synthetic_diurnal, write_trace_csv

log = logging.getLogger("sweetspot")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
KNOB_FLAGS = {"both": "both", "itr": "itr_only", "dvfs": "dvfs_only"}


class DomainFailure(RuntimeError):
    pass


def _load(args) -> ExperimentConfig:
    if args.config:
        return load_config(args.config, args.seed)
    return default_config(args.seed)


def _bayop_cfg(cfg: ExperimentConfig, args) -> BayOpConfig:
    b = cfg.bayop
    if getattr(args, "knobs", None):
        b = replace(b, knobs=KNOB_FLAGS[args.knobs])
    if getattr(args, "penalty", None):
        b = replace(b, penalty=args.penalty)
    return b


def _simulated(cfg: ExperimentConfig, bayop: BayOpConfig) -> SimulatedSystem:
    return SimulatedSystem(cfg.workload, cfg.os_profile, cfg.power, cfg.space, sla=cfg.sla,
                           root_seed=cfg.root_seed, sim_window_s=cfg.replay.sim_window_s,
                           dynamic_dvfs=bayop.knobs == "itr_only",
                           dynamic_itr=bayop.knobs == "dvfs_only",
                           ondemand_period_s=cfg.replay.ondemand_period_s,
                           itr_policy=cfg.replay.itr_policy, itr_period_s=cfg.replay.itr_period_s,
                           name=cfg.os)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    wl = cfg.workload.with_(duration_s=cfg.replay.sim_window_s) if cfg.workload.mode == "open" \
        else cfg.workload
    rows = sweep(cfg.sweep_space, wl, cfg.os_profile, cfg.power, cfg.sla, cfg.repetitions,
                 cfg.root_seed, jobs=args.jobs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out, rows)
    frontier = pareto_frontier(rows)
    write_sweep_csv(out.with_name(out.stem + ".frontier.csv"), frontier)
    ok = sum(r.measurement is not None for r in rows)
    print(f"sweep: {len(rows)} configs, {ok} stable, {sum(r.sla_ok for r in rows)} within SLA, "
          f"{len(frontier)} on the frontier -> {out}")
    if ok == 0:
        raise DomainFailure("every config was unstable")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load(args) if args.config else default_config(args.seed)
    data = read_fit_csv(args.sweep_csv)
    result = fit(data, initial_guess(data), cfg.fit)
    table = prediction_table(data, result.params, cfg.fit.itr_floor_us)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fit_json(out, result, table)
    p = result.params
    print(f"fit: Z={p.Z:.4g} alpha={p.alpha:.4g} phi={p.phi:.4g} gamma={p.gamma:.4g} beta={p.beta:.4g} "
          f"loss={result.loss:.4g} converged={result.converged} -> {out}")
    return EXIT_OK


def cmd_bayopt(args) -> int:
    cfg = _load(args)
    b = _bayop_cfg(cfg, args)
    system = _simulated(cfg, b)
    result = run_bayopt(system, cfg.sla.tightened(cfg.sla_headroom), b, cfg.space)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trials_csv(out, result)
    best = result.best_trial
    print(f"bayopt: {len(result.trials)} trials, best {best.config} penalty={best.penalty:.6g} -> {out}")
    if not math.isfinite(best.penalty):
        raise DomainFailure("every trial failed")
    return EXIT_OK


def cmd_control(args) -> int:
    cfg = _load(args)
    b = _bayop_cfg(cfg, args)
    system = _simulated(cfg, b)
    timeline = control_loop(system, cfg.sla, cfg.trigger, b, cfg.horizon_s, cfg.space,
                            cfg.replay.log_period_s, cfg.sla_headroom)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    timeline.write_csv(out)
    print(f"control: {len(timeline.events('tune_start'))} tunes, {timeline.total_joules:.1f} J, "
          f"{timeline.violations(cfg.sla)} settled-window violations -> {out}")
    return EXIT_OK


def _binned_trace(cfg: ExperimentConfig, trace_path):
    t = cfg.trace
    if trace_path:
        parsed = parse_trace(trace_path, t.time_column, t.qps_column)
        if parsed.malformed:
            print(f"trace: skipped {parsed.malformed} malformed row(s)", file=sys.stderr)
        records = parsed.records
    else:
        records = synthetic_diurnal(t.synthetic_bins, t.bin_seconds, t.synthetic_base,
                                    t.synthetic_amplitude, t.synthetic_noise, seed=cfg.root_seed)
    return scale_trace(bin_hourly(records, t.bin_seconds), t.target_qps, t.scale_mode)


def cmd_replay(args) -> int:
    cfg = _load(args)
    if not cfg.systems:
        raise ConfigError("replay needs at least one system under replay.systems")
    binned = _binned_trace(cfg, args.trace)
    b = _bayop_cfg(cfg, args)
    results = replay(binned, cfg.workload, cfg.os_profiles, cfg.power, cfg.sla, b, cfg.systems,
                     cfg.space, cfg.root_seed, cfg.replay, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for r in results:
        r.timeline.write_csv(out / f"{r.spec.name}.timeline.csv")
        summaries.append(r.summary)
    (out / "summary.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    _print_comparison(compare_summaries(summaries, cfg.baseline), cfg.baseline)
    return EXIT_OK


def _print_comparison(rows, baseline):
    print(f"{'system':<22}{'energy (x ' + baseline + ')':>30}{'violations':>12}{'incl. search':>14}")
    for r in rows:
        print(f"{r['system']:<22}{r['normalized_energy']:>30.3f}{r['violations']:>12d}"
              f"{r['whole_window_violations']:>14d}")


def cmd_compare(args) -> int:
    summaries = []
    for path in args.summaries:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read summary {path}: {exc}") from None
        summaries.extend(doc if isinstance(doc, list) else [doc])
    if len(summaries) < 2:
        raise ConfigError("compare needs at least two system summaries")
    baseline = args.baseline or summaries[0]["system"]
    try:
        rows = compare_summaries(summaries, baseline)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    _print_comparison(rows, baseline)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_synth_trace(args) -> int:
    cfg = _load(args)
    t = cfg.trace
    records = synthetic_diurnal(t.synthetic_bins, t.bin_seconds, t.synthetic_base, t.synthetic_amplitude,
                                t.synthetic_noise, seed=cfg.root_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out, records)
    print(f"synth-trace: {len(records)} records over {t.synthetic_bins} bins -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sweetspot",
                                     description="Find energy-efficient ITR-delay/DVFS settings "
                                                 "for a simulated network server.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML (default: bundled default_experiment.yaml)")
    common.add_argument("--seed", type=int, default=None, help="override root_seed")
    tuned = argparse.ArgumentParser(add_help=False)
    tuned.add_argument("--knobs", choices=sorted(KNOB_FLAGS), default=None,
                       help="tune both knobs or restrict to one")
    tuned.add_argument("--penalty", choices=("sla_energy", "latency_only"), default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", parents=[common], help="static grid sweep + Pareto frontier")
    p.add_argument("--out", required=True, help="sweep CSV; frontier goes next to it")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", parents=[common], help="fit the analytic model to a sweep CSV")
    p.add_argument("sweep_csv")
    p.add_argument("--out", required=True, help="FitResult JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bayopt", parents=[common, tuned], help="one tuning run at fixed load")
    p.add_argument("--out", required=True, help="trial history CSV")
    p.set_defaults(func=cmd_bayopt)

    p = sub.add_parser("control", parents=[common, tuned], help="tune/hold loop at fixed load")
    p.add_argument("--out", required=True, help="timeline CSV")
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("replay", parents=[common, tuned], help="replay a diurnal trace on every system")
    p.add_argument("--trace", default=None, help="trace CSV (default: synthetic diurnal day)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("compare", help="normalize replay summaries against a baseline system")
    p.add_argument("summaries", nargs="+", help="summary JSON files")
    p.add_argument("--baseline", default=None, help="baseline system name (default: first)")
    p.add_argument("--out", default=None, help="write the comparison JSON here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth-trace", parents=[common], help="write the synthetic diurnal trace")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (ConfigFileError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InsufficientData, FitDiverged, TraceError, DomainFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
