"""Black-box minimization of an SLA-aware energy penalty over the knob grid.

A Gaussian process with a squared-exponential ARD kernel models the log of
the penalty on inputs min-max scaled to [0, 1]^2. Hyperparameters come from a
small log-marginal-likelihood grid search. Acquisition is expected
improvement evaluated exhaustively over the (possibly subsampled) grid.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.stats import norm

from .core import Config, ConfigError, ConfigSpace, Measurement, SlaObjective, enumerate_grid
from .seeding import derive_seed

log = logging.getLogger(__name__)

LENGTH_GRID = (0.05, 0.1, 0.2, 0.5, 1.0)
NOISE_GRID = (1e-4, 1e-2, 1e-1)
JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)
KNOBS = ("both", "itr_only", "dvfs_only")


def penalty(m: Measurement, sla: SlaObjective) -> float:
    """Measured energy, multiplied by the SLA overshoot in microseconds (+1) once violated."""
    return m.energy_joules * max(m.tail_latency_us - sla.bound_us + 1.0, 1.0)


def penalty_latency_only(m: Measurement, sla: SlaObjective | None = None) -> float:
    return m.tail_latency_us


PENALTIES: dict[str, Callable[[Measurement, SlaObjective], float]] = {
    "sla_energy": penalty,
    "latency_only": penalty_latency_only,
}


class GpDegenerate(RuntimeError):
    pass


def se_kernel(a: np.ndarray, b: np.ndarray, length_scales, signal_var: float = 1.0) -> np.ndarray:
    ls = np.asarray(length_scales, dtype=float)
    d = (a[:, None, :] - b[None, :, :]) / ls
    return signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))


@dataclass
class GpSurrogate:
    x: np.ndarray
    y: np.ndarray
    length_scales: tuple[float, float]
    noise_var: float
    signal_var: float = 1.0
    y_mean: float = 0.0
    y_std: float = 1.0
    jitter: float = 0.0
    log_marginal_likelihood: float = -math.inf
    _chol: np.ndarray = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)

    @classmethod
    def with_hyperparameters(cls, x, y, length_scales, noise_var, signal_var=1.0) -> "GpSurrogate":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float)
        mean = float(np.mean(y))
        std = float(np.std(y))
        if not std > 0:
            std = 1.0
        ys = (y - mean) / std
        k = se_kernel(x, x, length_scales, signal_var)
        n = y.size
        for jit in JITTERS:
            try:
                chol = cholesky(k + (noise_var + jit) * np.eye(n), lower=True)
                break
            except np.linalg.LinAlgError:
                continue
        else:
            raise GpDegenerate("GP degenerate")
        alpha = cho_solve((chol, True), ys)
        lml = float(-0.5 * ys @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * math.log(2 * math.pi))
        return cls(x, y, tuple(float(v) for v in length_scales), float(noise_var), float(signal_var),
                   mean, std, jit, lml, chol, alpha)

    def predict(self, xs) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent (noise-free) variance, in output units."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ks = se_kernel(xs, self.x, self.length_scales, self.signal_var)
        mu = ks @ self._alpha
        v = solve_triangular(self._chol, ks.T, lower=True)
        var = np.maximum(self.signal_var - np.sum(v * v, axis=0), 0.0)
        return mu * self.y_std + self.y_mean, var * self.y_std ** 2


def gp_fit(x, y, length_grid: Sequence[float] = LENGTH_GRID,
           noise_grid: Sequence[float] = NOISE_GRID) -> GpSurrogate:
    """Fit by maximizing log marginal likelihood over the hyperparameter grid."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("gp_fit needs at least one observation")
    best = None
    for l1, l2, nv in itertools.product(length_grid, length_grid, noise_grid):
        try:
            gp = GpSurrogate.with_hyperparameters(x, y, (l1, l2), nv)
        except GpDegenerate:
            continue
        if best is None or gp.log_marginal_likelihood > best.log_marginal_likelihood:
            best = gp
    if best is None:
        raise GpDegenerate("GP degenerate")
    return best


def expected_improvement(mu, sigma, best_so_far: float):
    """EI for minimization; sigma=0 reduces to max(best - mu, 0)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = best_so_far - mu
    out = np.maximum(imp, 0.0)
    pos = sigma > 0
    if np.any(pos):
        s = sigma[pos] if sigma.ndim else sigma
        i = imp[pos] if imp.ndim else imp
        with np.errstate(over="ignore"):
            z = i / s
            ei = i * norm.cdf(z) + s * norm.pdf(z)
        if out.ndim:
            out[pos] = np.maximum(ei, 0.0)
        else:
            out = np.maximum(ei, 0.0)
    return out if out.ndim else float(out)


def suggest_next(surrogate: GpSurrogate, candidates: Sequence[Config], best_so_far: float,
                 space: ConfigSpace, seed: int = 0, max_candidates: int = 50_000) -> Config:
    """Argmax EI over the candidates; ties go to the earliest candidate."""
    if not candidates:
        raise ValueError("no candidates")
    cands = list(candidates)
    if len(cands) > max_candidates:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(cands), size=max_candidates, replace=False))
        cands = [cands[k] for k in idx]
    mu, var = surrogate.predict(space.normalize(cands))
    ei = expected_improvement(mu, np.sqrt(var), best_so_far)
    return cands[int(np.argmax(ei))]


def latin_hypercube(space: ConfigSpace, n: int, rng: np.random.Generator, knobs: str = "both",
                    anchor: Config | None = None) -> list[Config]:
    """Stratified quasi-random grid points; restricted knobs stay at the anchor."""
    anchor = anchor or Config(space.itr_values[0], space.f_max)

    def axis(values):
        u = (rng.permutation(n) + rng.random(n)) / n
        return [values[min(int(v * len(values)), len(values) - 1)] for v in u]

    itr = axis(space.itr_values) if knobs != "dvfs_only" else [anchor.itr_us] * n
    dvfs = axis(space.dvfs_values) if knobs != "itr_only" else [anchor.dvfs_ghz] * n
    return [Config(i, f) for i, f in zip(itr, dvfs)]


def candidate_grid(space: ConfigSpace, knobs: str = "both", anchor: Config | None = None) -> list[Config]:
    anchor = anchor or Config(space.itr_values[0], space.f_max)
    if knobs == "both":
        return enumerate_grid(space)
    if knobs == "itr_only":
        return [Config(i, anchor.dvfs_ghz) for i in space.itr_values]
    if knobs == "dvfs_only":
        return [Config(anchor.itr_us, f) for f in space.dvfs_values]
    raise ConfigError(f"unknown knobs {knobs!r}")


@dataclass(frozen=True)
class BayOpConfig:
    n_trials: int = 30
    n_init: int = 8
    seed: int = 0
    knobs: str = "both"
    penalty: str = "sla_energy"
    trial_window_s: float = 10.0
    anchor_itr: int | None = None
    anchor_dvfs: float | None = None
    max_candidates: int = 50_000

    def __post_init__(self):
        if not 1 <= self.n_init <= self.n_trials:
            raise ConfigError(f"need 1 <= n_init <= n_trials, got {self.n_init}, {self.n_trials}")
        if self.knobs not in KNOBS:
            raise ConfigError(f"knobs must be one of {KNOBS}, got {self.knobs!r}")
        if self.penalty not in PENALTIES:
            raise ConfigError(f"penalty must be one of {sorted(PENALTIES)}, got {self.penalty!r}")
        if not self.trial_window_s > 0:
            raise ConfigError("trial_window_s must be positive")

    def anchor(self, space: ConfigSpace) -> Config:
        itr = self.anchor_itr if self.anchor_itr is not None else space.itr_values[0]
        dvfs = self.anchor_dvfs if self.anchor_dvfs is not None else space.f_max
        return Config(itr, dvfs)


@dataclass(frozen=True)
class Trial:
    index: int
    config: Config
    measurement: Measurement | None
    penalty: float

    @property
    def failed(self) -> bool:
        return self.measurement is None


@dataclass
class BayOpResult:
    best: Config
    trials: list[Trial]

    @property
    def best_trial(self) -> Trial:
        return min(self.trials, key=lambda t: (t.penalty, t.index))

    def best_so_far(self) -> list[float]:
        return list(np.minimum.accumulate([t.penalty for t in self.trials]))


def _log_targets(trials: Sequence[Trial]) -> np.ndarray:
    pens = np.array([t.penalty for t in trials], dtype=float)
    finite = np.isfinite(pens)
    pos = pens[finite & (pens > 0)]
    floor = pos.min() * 1e-3 if pos.size else 1e-300
    y = np.log(np.maximum(np.where(finite, pens, 1.0), floor))
    if not np.all(finite):
        worst = y[finite].max() + 1.0 if np.any(finite) else 0.0
        y[~finite] = worst
    return y


def run_bayopt(system, sla: SlaObjective, cfg: BayOpConfig, space: ConfigSpace,
               on_trial: Callable[[Trial], None] | None = None) -> BayOpResult:
    """Quasi-random warm-up then GP/EI-guided trials on a live system.

    Each trial applies a config, measures for ``cfg.trial_window_s`` and scores
    the measurement. The best config is re-applied before returning.
    """
    score = PENALTIES[cfg.penalty]
    anchor = cfg.anchor(space)
    grid = candidate_grid(space, cfg.knobs, anchor)
    lhs_rng = np.random.default_rng(derive_seed(cfg.seed, "lhs"))
    init = latin_hypercube(space, cfg.n_init, lhs_rng, cfg.knobs, anchor)
    trials: list[Trial] = []
    seen: set[Config] = set()

    def evaluate(config: Config):
        system.apply(config)
        try:
            m = system.measure(cfg.trial_window_s)
            p = float(score(m, sla))
        except Exception as exc:  # a live system must survive a bad trial
            log.warning("trial %d at %s failed: %s", len(trials), config, exc)
            m, p = None, math.inf
        t = Trial(len(trials), config, m, p)
        trials.append(t)
        seen.add(config)
        if on_trial:
            on_trial(t)

    for c in init:
        evaluate(c)
    for k in range(cfg.n_init, cfg.n_trials):
        fresh = [c for c in grid if c not in seen] or grid
        finite = [t for t in trials if math.isfinite(t.penalty)]
        if not finite:
            rng = np.random.default_rng(derive_seed(cfg.seed, "fallback", k))
            evaluate(fresh[int(rng.integers(len(fresh)))])
            continue
        y = _log_targets(trials)
        x = space.normalize([t.config for t in trials])
        try:
            gp = gp_fit(x, y)
        except GpDegenerate:
            rng = np.random.default_rng(derive_seed(cfg.seed, "fallback", k))
            evaluate(fresh[int(rng.integers(len(fresh)))])
            continue
        best_y = float(np.min(y))
        nxt = suggest_next(gp, fresh, best_y, space, seed=derive_seed(cfg.seed, "subsample", k),
                           max_candidates=cfg.max_candidates)
        evaluate(nxt)
    best = min(trials, key=lambda t: (t.penalty, t.index))
    if math.isfinite(best.penalty):
        system.apply(best.config)
    return BayOpResult(best.config, trials)


TRIAL_CSV_COLUMNS = ("trial", "itr_us", "dvfs_ghz", "tail_latency_us", "energy_j", "penalty", "applied")


def write_trials_csv(path, result: BayOpResult):
    """Trial history; the `applied` column marks the config left in place."""
    best_idx = result.best_trial.index if math.isfinite(result.best_trial.penalty) else -1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_CSV_COLUMNS)
        for t in result.trials:
            m = t.measurement
            w.writerow([t.index, t.config.itr_us, repr(t.config.dvfs_ghz),
                        repr(m.tail_latency_us) if m else "nan",
                        repr(m.energy_joules) if m else "nan",
                        repr(t.penalty), "true" if t.index == best_idx else "false"])
