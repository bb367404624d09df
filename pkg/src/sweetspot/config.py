"""Experiment configuration: a versioned YAML file validated at load time.

Every error message names the file and line of the offending key, so a typo
in a 100-line experiment file is found at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .bayopt import KNOBS, PENALTIES, BayOpConfig
from .controller import TriggerPolicy
from .core import ConfigError, ConfigSpace, SlaObjective
from .model import FitConfig
from .sim.engine import OsProfile, PowerModel, SizeDistribution, WorkloadSpec
from .sim.governors import AdaptiveItrPolicy
from .trace import ReplaySettings, SystemSpec

SCHEMA_VERSION = 1


class ConfigFileError(ValueError):
    """Invalid experiment file; the message carries a file:line anchor."""


@dataclass(frozen=True)
class TraceSettings:
    bin_seconds: float = 3600.0
    scale_mode: str = "peak"
    target_qps: float = 26000.0
    time_column: str = "timestamp_s"
    qps_column: str = "qps"
    synthetic_bins: int = 24
    synthetic_base: float = 0.55
    synthetic_amplitude: float = 0.4
    synthetic_noise: float = 0.03


@dataclass(frozen=True)
class ExperimentConfig:
    root_seed: int
    space: ConfigSpace
    sweep_space: ConfigSpace
    sla: SlaObjective
    workload: WorkloadSpec
    os_profiles: dict[str, OsProfile]
    os: str
    power: PowerModel
    repetitions: int
    fit: FitConfig
    bayop: BayOpConfig
    sla_headroom: float
    trigger: TriggerPolicy
    horizon_s: float
    replay: ReplaySettings
    trace: TraceSettings
    systems: tuple[SystemSpec, ...]
    baseline: str
    source: str = "<config>"
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def os_profile(self) -> OsProfile:
        return self.os_profiles[self.os]


def _line_index(node, path=(), out=None) -> dict[tuple, int]:
    """Map key paths to 1-based line numbers from a composed YAML node tree."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = path + (k.value,)
            out[key] = k.start_mark.line + 1
            _line_index(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


class _Reader:
    def __init__(self, data: dict, lines: dict, source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def where(self, path) -> str:
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return f"{self.source}:{self.lines.get(path, 1)}"

    def fail(self, path, msg):
        dotted = ".".join(str(p) for p in path) or "<root>"
        raise ConfigFileError(f"{self.where(path)}: {dotted}: {msg}")

    def section(self, path, allowed) -> dict:
        node = self.data
        for p in path:
            if isinstance(node, dict):
                node = node.get(p, {})
            elif isinstance(node, list) and isinstance(p, int) and p < len(node):
                node = node[p]
            else:
                node = None
        if node is None:
            node = {}
        if not isinstance(node, dict):
            self.fail(path, "expected a mapping")
        unknown = sorted(set(node) - set(allowed))
        if unknown:
            self.fail(tuple(path) + (unknown[0],), f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return node

    def get(self, sec: dict, path, key, kind, default):
        if key not in sec or sec[key] is None:
            return default
        v = sec[key]
        p = tuple(path) + (key,)
        if kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                self.fail(p, f"expected an integer, got {v!r}")
        elif kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                self.fail(p, f"expected a number, got {v!r}")
            v = float(v)
        elif kind is bool:
            if not isinstance(v, bool):
                self.fail(p, f"expected true/false, got {v!r}")
        elif kind is str:
            if not isinstance(v, str):
                self.fail(p, f"expected a string, got {v!r}")
        elif kind is list:
            if not isinstance(v, list):
                self.fail(p, f"expected a list, got {v!r}")
        return v

    def build(self, path, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, ValueError, TypeError) as exc:
            self.fail(path, str(exc))


def _space(r: _Reader, path) -> ConfigSpace:
    sec = r.section(path, {"itr_min", "itr_max", "itr_step", "dvfs_min", "dvfs_max", "dvfs_step",
                           "itr_values", "dvfs_values"})
    d = ConfigSpace.default()
    step = r.get(sec, path, "itr_step", int, 2)
    if "itr_values" in sec or "dvfs_values" in sec:
        itr = r.get(sec, path, "itr_values", list, None)
        dvfs = r.get(sec, path, "dvfs_values", list, None)
        if itr is None or dvfs is None:
            r.fail(path, "itr_values and dvfs_values must be given together")
        return r.build(path, ConfigSpace, tuple(itr), tuple(dvfs), step)
    kw = dict(
        itr_min=r.get(sec, path, "itr_min", int, 0),
        itr_max=r.get(sec, path, "itr_max", int, d.itr_max),
        itr_step=step,
        dvfs_min=r.get(sec, path, "dvfs_min", float, d.f_min),
        dvfs_max=r.get(sec, path, "dvfs_max", float, d.f_max),
        dvfs_step=r.get(sec, path, "dvfs_step", float, 0.1),
    )
    if kw["itr_step"] <= 0 or kw["dvfs_step"] <= 0:
        r.fail(path, "steps must be positive")
    if kw["itr_max"] < kw["itr_min"] or kw["dvfs_max"] < kw["dvfs_min"]:
        r.fail(path, "range max must be >= min")
    return r.build(path, ConfigSpace.from_ranges, **kw)


def _profile(r: _Reader, path, name) -> OsProfile:
    sec = r.section(path, {"per_interrupt_cycles", "per_request_cycles", "per_kb_cycles", "scale_of",
                           "scale"})
    return r.build(path, OsProfile, name,
                   r.get(sec, path, "per_interrupt_cycles", int, None),
                   r.get(sec, path, "per_request_cycles", int, None),
                   r.get(sec, path, "per_kb_cycles", int, 0))


def load_config_text(text: str, source: str = "<config>", root_seed: int | None = None) -> ExperimentConfig:
    """Parse and validate; `root_seed`, when given, overrides the file's value."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigFileError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigFileError(f"{source}:1: top level must be a mapping")
    if root_seed is not None:
        data["root_seed"] = root_seed
    r = _Reader(data, _line_index(node), source)
    top = r.section((), {"schema_version", "root_seed", "config_space", "sweep", "sla", "workload",
                         "os_profiles", "os", "power_model", "fit", "bayop", "trigger", "control",
                         "replay", "trace", "governors"})
    version = r.get(top, (), "schema_version", int, None)
    if version is None:
        r.fail(("schema_version",), "missing (this build reads schema_version 1)")
    if version != SCHEMA_VERSION:
        r.fail(("schema_version",), f"unsupported version {version} (expected {SCHEMA_VERSION})")
    root_seed = r.get(top, (), "root_seed", int, 0)

    space = _space(r, ("config_space",))
    sw = r.section(("sweep",), {"space", "repetitions"})
    sweep_space = _space(r, ("sweep", "space")) if "space" in sw else space
    repetitions = r.get(sw, ("sweep",), "repetitions", int, 1)
    if repetitions < 1:
        r.fail(("sweep", "repetitions"), "must be >= 1")

    s = r.section(("sla",), {"percentile", "bound_us"})
    sla = r.build(("sla",), SlaObjective, r.get(s, ("sla",), "percentile", float, 99.0),
                  r.get(s, ("sla",), "bound_us", float, 500.0))

    wp = ("workload",)
    w = r.section(wp, {"mode", "qps", "message_kb", "request_kb", "duration_s", "rounds",
                       "link_gbps", "mtu_kb"})
    rk = r.section(wp + ("request_kb",), {"kind", "low", "high"})
    size = r.build(wp + ("request_kb",), SizeDistribution,
                   r.get(rk, wp + ("request_kb",), "kind", str, "uniform"),
                   r.get(rk, wp + ("request_kb",), "low", float, 0.001),
                   r.get(rk, wp + ("request_kb",), "high", float, 1.0))
    wd = WorkloadSpec()
    workload = r.build(wp, WorkloadSpec,
                       mode=r.get(w, wp, "mode", str, wd.mode),
                       qps=r.get(w, wp, "qps", float, wd.qps),
                       message_kb=r.get(w, wp, "message_kb", float, wd.message_kb),
                       request_kb=size,
                       duration_s=r.get(w, wp, "duration_s", float, wd.duration_s),
                       rounds=r.get(w, wp, "rounds", int, None),
                       link_gbps=r.get(w, wp, "link_gbps", float, wd.link_gbps),
                       mtu_kb=r.get(w, wp, "mtu_kb", float, wd.mtu_kb))

    op = ("os_profiles",)
    profiles_raw = top.get("os_profiles") or {}
    if not isinstance(profiles_raw, dict) or not profiles_raw:
        r.fail(op, "need at least one named OS profile")
    profiles = {}
    for name in profiles_raw:
        sec = r.section(op + (name,), {"per_interrupt_cycles", "per_request_cycles", "per_kb_cycles",
                                       "scale_of", "scale"})
        if "scale_of" in sec:
            continue
        for key in ("per_interrupt_cycles", "per_request_cycles"):
            if key not in sec:
                r.fail(op + (name,), f"missing {key}")
        profiles[name] = _profile(r, op + (name,), str(name))
    for name, sec in profiles_raw.items():
        if isinstance(sec, dict) and "scale_of" in sec:
            base = r.get(sec, op + (name,), "scale_of", str, None)
            if base not in profiles:
                r.fail(op + (name, "scale_of"), f"unknown base profile {base!r}")
            factor = r.get(sec, op + (name,), "scale", float, 1.0)
            if not factor > 0:
                r.fail(op + (name, "scale"), "must be positive")
            profiles[name] = profiles[base].scaled(factor, str(name))
    os_name = r.get(top, (), "os", str, next(iter(profiles)))
    if os_name not in profiles:
        r.fail(("os",), f"unknown OS profile {os_name!r} (have: {', '.join(profiles)})")

    pp = ("power_model",)
    p = r.section(pp, {"p_idle", "k_dyn", "exponent", "sleep_enabled", "p_sleep", "sleep_entry_idle_us",
                       "wake_latency_us"})
    pd = PowerModel()
    power = r.build(pp, PowerModel,
                    r.get(p, pp, "p_idle", float, pd.p_idle), r.get(p, pp, "k_dyn", float, pd.k_dyn),
                    r.get(p, pp, "exponent", float, pd.exponent),
                    r.get(p, pp, "sleep_enabled", bool, pd.sleep_enabled),
                    r.get(p, pp, "p_sleep", float, pd.p_sleep),
                    r.get(p, pp, "sleep_entry_idle_us", float, pd.sleep_entry_idle_us),
                    r.get(p, pp, "wake_latency_us", float, pd.wake_latency_us))

    fp = ("fit",)
    f = r.section(fp, {"learning_rate", "max_iterations", "restarts", "loss_threshold", "itr_floor_us",
                       "jitter", "seed", "patience"})
    fd = FitConfig()
    fit = r.build(fp, FitConfig,
                  learning_rate=r.get(f, fp, "learning_rate", float, fd.learning_rate),
                  max_iterations=r.get(f, fp, "max_iterations", int, fd.max_iterations),
                  restarts=r.get(f, fp, "restarts", int, fd.restarts),
                  loss_threshold=r.get(f, fp, "loss_threshold", float, fd.loss_threshold),
                  itr_floor_us=r.get(f, fp, "itr_floor_us", float, fd.itr_floor_us),
                  jitter=r.get(f, fp, "jitter", float, fd.jitter),
                  seed=r.get(f, fp, "seed", int, root_seed),
                  patience=r.get(f, fp, "patience", int, fd.patience))

    bp = ("bayop",)
    b = r.section(bp, {"n_trials", "n_init", "knobs", "penalty", "trial_window_s", "anchor_itr",
                       "anchor_dvfs", "sla_headroom", "seed"})
    bd = BayOpConfig()
    knobs = r.get(b, bp, "knobs", str, bd.knobs)
    if knobs not in KNOBS:
        r.fail(bp + ("knobs",), f"must be one of {', '.join(KNOBS)}")
    pen = r.get(b, bp, "penalty", str, bd.penalty)
    if pen not in PENALTIES:
        r.fail(bp + ("penalty",), f"must be one of {', '.join(sorted(PENALTIES))}")
    bayop = r.build(bp, BayOpConfig,
                    n_trials=r.get(b, bp, "n_trials", int, bd.n_trials),
                    n_init=r.get(b, bp, "n_init", int, bd.n_init),
                    seed=r.get(b, bp, "seed", int, root_seed), knobs=knobs, penalty=pen,
                    trial_window_s=r.get(b, bp, "trial_window_s", float, bd.trial_window_s),
                    anchor_itr=r.get(b, bp, "anchor_itr", int, None),
                    anchor_dvfs=r.get(b, bp, "anchor_dvfs", float, None))
    if not space.contains(bayop.anchor(space)):
        r.fail(bp, f"anchor {bayop.anchor(space)} is not in the config space")
    headroom = r.get(b, bp, "sla_headroom", float, 0.1)
    if not 0 <= headroom < 1:
        r.fail(bp + ("sla_headroom",), "must be in [0, 1)")

    tp = ("trigger",)
    t = r.section(tp, {"kind", "period_s", "delta_fraction"})
    trigger = r.build(tp, TriggerPolicy, r.get(t, tp, "kind", str, "periodic"),
                      r.get(t, tp, "period_s", float, 3600.0),
                      r.get(t, tp, "delta_fraction", float, 0.1))

    cp = ("control",)
    c = r.section(cp, {"horizon_s", "log_period_s", "sim_window_s"})
    horizon = r.get(c, cp, "horizon_s", float, 86400.0)
    if not horizon > 0:
        r.fail(cp + ("horizon_s",), "must be positive")
    log_period = r.get(c, cp, "log_period_s", float, 600.0)
    sim_window = r.get(c, cp, "sim_window_s", float, 0.25)
    if not log_period > 0 or not sim_window > 0:
        r.fail(cp, "log_period_s and sim_window_s must be positive")

    gp_ = ("governors",)
    g = r.section(gp_, {"ondemand_period_s", "adaptive_itr_period_s", "bulk_bytes_per_s",
                        "bulk_pkts_per_s", "bulk_itr_us", "latency_itr_us"})
    ad = AdaptiveItrPolicy()
    policy = r.build(gp_, AdaptiveItrPolicy,
                     r.get(g, gp_, "bulk_bytes_per_s", float, ad.bulk_bytes_per_s),
                     r.get(g, gp_, "bulk_pkts_per_s", float, ad.bulk_pkts_per_s),
                     r.get(g, gp_, "bulk_itr_us", int, ad.bulk_itr_us),
                     r.get(g, gp_, "latency_itr_us", int, ad.latency_itr_us))
    settings = ReplaySettings(log_period, sim_window, headroom,
                              r.get(g, gp_, "ondemand_period_s", float, 0.01),
                              r.get(g, gp_, "adaptive_itr_period_s", float, 0.001), policy)

    trp = ("trace",)
    tr = r.section(trp, {"bin_seconds", "scale_mode", "target_qps", "time_column", "qps_column",
                         "synthetic_bins", "synthetic_base", "synthetic_amplitude", "synthetic_noise"})
    td = TraceSettings()
    trace = TraceSettings(
        r.get(tr, trp, "bin_seconds", float, td.bin_seconds),
        r.get(tr, trp, "scale_mode", str, td.scale_mode),
        r.get(tr, trp, "target_qps", float, td.target_qps),
        r.get(tr, trp, "time_column", str, td.time_column),
        r.get(tr, trp, "qps_column", str, td.qps_column),
        r.get(tr, trp, "synthetic_bins", int, td.synthetic_bins),
        r.get(tr, trp, "synthetic_base", float, td.synthetic_base),
        r.get(tr, trp, "synthetic_amplitude", float, td.synthetic_amplitude),
        r.get(tr, trp, "synthetic_noise", float, td.synthetic_noise))
    if trace.scale_mode not in ("peak", "mean"):
        r.fail(trp + ("scale_mode",), "must be peak or mean")
    if not trace.bin_seconds > 0 or not trace.target_qps > 0:
        r.fail(trp, "bin_seconds and target_qps must be positive")

    rp = ("replay",)
    rs = r.section(rp, {"systems", "baseline"})
    systems = []
    for i, item in enumerate(r.get(rs, rp, "systems", list, []) or []):
        ip = rp + ("systems", i)
        sec = r.section(ip, {"name", "mode", "os", "knobs"})
        if "name" not in sec:
            r.fail(ip, "system needs a name")
        spec = r.build(ip, SystemSpec, r.get(sec, ip, "name", str, None),
                       r.get(sec, ip, "mode", str, "bayop"), r.get(sec, ip, "os", str, os_name),
                       r.get(sec, ip, "knobs", str, "both"))
        if spec.os not in profiles:
            r.fail(ip + ("os",), f"unknown OS profile {spec.os!r}")
        systems.append(spec)
    if len({s.name for s in systems}) != len(systems):
        r.fail(rp + ("systems",), "system names must be unique")
    baseline = r.get(rs, rp, "baseline", str, systems[0].name if systems else "")
    if systems and baseline not in {s.name for s in systems}:
        r.fail(rp + ("baseline",), f"baseline {baseline!r} is not a listed system")

    return ExperimentConfig(root_seed, space, sweep_space, sla, workload, profiles, os_name, power,
                            repetitions, fit, bayop, headroom, trigger, horizon, settings, trace,
                            tuple(systems), baseline, source, data)


def load_config(path, root_seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"{path}: cannot read: {exc.strerror}") from None
    return load_config_text(text, str(path), root_seed)


def default_config_text() -> str:
    return resources.files("sweetspot.data").joinpath("default_experiment.yaml").read_text()


def default_config(root_seed: int | None = None) -> ExperimentConfig:
    return load_config_text(default_config_text(), "default_experiment.yaml", root_seed)


def describe(cfg: ExperimentConfig) -> dict[str, Any]:
    return {"source": cfg.source, "root_seed": cfg.root_seed, "os": cfg.os, "sla": [cfg.sla.percentile,
            cfg.sla.bound_us], "grid": cfg.space.size}
