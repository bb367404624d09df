"""Analytic per-request latency and energy model, and its fitting procedure.

Latency of a single request is the sum of a frequency-dependent work term and
a coalescing term::

    dt = Z / dvfs**(1 + alpha) + phi * itr

and the per-request energy is::

    dJ = gamma * (phi * itr_seconds) * dvfs**beta

Fitting minimizes the joint log-space squared error of both predictions with
Adam, restarting from jittered initial points and keeping the best restart.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Config, ConfigError
from .seeding import derive_seed

PARAM_NAMES = ("Z", "alpha", "phi", "gamma", "beta")
FIT_CSV_COLUMNS = ("itr_us", "dvfs_ghz", "tail_latency_us", "energy_j")
MIN_FIT_ROWS = 8


class FitDiverged(RuntimeError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    Z: float
    alpha: float
    phi: float
    gamma: float
    beta: float

    def __post_init__(self):
        if not all(math.isfinite(getattr(self, n)) for n in PARAM_NAMES):
            raise ConfigError(f"model parameters must be finite: {self}")
        if self.Z <= 0:
            raise ConfigError(f"Z must be positive, got {self.Z}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not 0 <= self.phi <= 1:
            raise ConfigError(f"phi must be in [0, 1], got {self.phi}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)


def _check_dvfs(dvfs: float):
    if not dvfs > 0:
        raise ValueError(f"dvfs must be positive, got {dvfs}")


def predict_latency(params: ModelParams, config: Config) -> float:
    """Per-request latency in microseconds."""
    _check_dvfs(config.dvfs_ghz)
    work = params.Z / config.dvfs_ghz ** (1.0 + params.alpha)
    return work + params.phi * config.itr_us


def predict_energy(params: ModelParams, config: Config) -> float:
    """Per-request energy in joules. Zero at itr=0 (see FitConfig.itr_floor_us)."""
    _check_dvfs(config.dvfs_ghz)
    return params.gamma * (params.phi * config.itr_us * 1e-6) * config.dvfs_ghz ** params.beta


def floored_energy(params: ModelParams, config: Config, itr_floor_us: float = 1.0) -> float:
    """predict_energy with ITR clamped below at `itr_floor_us` so itr=0 stays positive."""
    _check_dvfs(config.dvfs_ghz)
    itr_s = max(config.itr_us, itr_floor_us) * 1e-6
    return params.gamma * params.phi * itr_s * config.dvfs_ghz ** params.beta


@dataclass(frozen=True)
class FitRow:
    config: Config
    tail_latency_us: float
    energy_j: float


@dataclass(frozen=True)
class FitDataset:
    rows: tuple[FitRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if len(self.rows) < MIN_FIT_ROWS:
            raise InsufficientData(
                f"insufficient data: need at least {MIN_FIT_ROWS} rows, got {len(self.rows)}")
        for r in self.rows:
            if not (r.tail_latency_us > 0 and r.energy_j > 0):
                raise InsufficientData(f"observations must be positive: {r}")

    def __len__(self):
        return len(self.rows)

    def arrays(self):
        itr = np.array([r.config.itr_us for r in self.rows], dtype=float)
        f = np.array([r.config.dvfs_ghz for r in self.rows], dtype=float)
        lat = np.array([r.tail_latency_us for r in self.rows], dtype=float)
        en = np.array([r.energy_j for r in self.rows], dtype=float)
        return itr, f, lat, en


def read_fit_csv(path) -> FitDataset:
    """Read itr_us,dvfs_ghz,tail_latency_us,energy_j (extra columns ignored).

    Rows with non-positive observations, e.g. unstable sweep rows, are skipped.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(FIT_CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise InsufficientData(f"CSV {path} lacks columns {sorted(missing)}")
        for rec in reader:
            try:
                lat = float(rec["tail_latency_us"])
                en = float(rec["energy_j"])
                cfg = Config(int(float(rec["itr_us"])), float(rec["dvfs_ghz"]))
            except (TypeError, ValueError, ConfigError):
                continue
            if lat > 0 and en > 0 and math.isfinite(lat) and math.isfinite(en):
                rows.append(FitRow(cfg, lat, en))
    return FitDataset(tuple(rows))


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 1e-2
    max_iterations: int = 5000
    restarts: int = 5
    loss_threshold: float = 0.05
    itr_floor_us: float = 1.0
    jitter: float = 0.3
    seed: int = 0
    # early stop when the loss stalls for this many iterations
    patience: int = 200
    tolerance: float = 1e-12


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    latency_loss: float
    energy_loss: float
    restarts: int
    converged: bool
    itr_floor_us: float
    restart_params: tuple[ModelParams | None, ...] = ()
    restart_losses: tuple[float, ...] = ()

    @property
    def loss(self) -> float:
        return self.latency_loss + self.energy_loss

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "latency_loss": self.latency_loss,
            "energy_loss": self.energy_loss,
            "restarts": self.restarts,
            "converged": self.converged,
            "itr_floor_us": self.itr_floor_us,
            "restart_params": [asdict(p) if p else None for p in self.restart_params],
            "restart_losses": list(self.restart_losses),
        }


# Unconstrained coordinates: theta = [log Z, alpha, logit phi, log gamma, beta].

def _to_theta(p: ModelParams) -> np.ndarray:
    phi = min(max(p.phi, 1e-9), 1 - 1e-9)
    return np.array([math.log(p.Z), p.alpha, math.log(phi / (1 - phi)), math.log(p.gamma), p.beta])


def _from_theta(theta: np.ndarray) -> ModelParams:
    return ModelParams(
        Z=math.exp(theta[0]),
        alpha=float(theta[1]),
        phi=float(_sigmoid(theta[2])),
        gamma=math.exp(theta[3]),
        beta=float(theta[4]),
    )


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


class _LogLoss:
    """Joint log-space MSE and its analytic gradient in theta."""

    def __init__(self, itr, f, lat, energy, itr_floor_us):
        self.itr = np.asarray(itr, dtype=float)
        self.itr_e = np.maximum(self.itr, itr_floor_us) * 1e-6
        self.log_f = np.log(np.asarray(f, dtype=float))
        self.log_lat = np.log(lat)
        self.log_en = np.log(energy)
        self.n = self.itr.size

    def parts(self, theta):
        log_z, alpha, u_phi, log_g, beta = theta
        phi = _sigmoid(u_phi)
        work = np.exp(log_z - (1.0 + alpha) * self.log_f)
        coal = phi * self.itr
        t = work + coal
        r_t = np.log(t) - self.log_lat
        log_j = log_g + np.log(phi) + np.log(self.itr_e) + beta * self.log_f
        r_j = log_j - self.log_en
        return phi, work, coal, t, r_t, r_j

    def value(self, theta) -> tuple[float, float]:
        *_, r_t, r_j = self.parts(theta)
        return float(np.mean(r_t ** 2)), float(np.mean(r_j ** 2))

    def value_and_grad(self, theta):
        phi, work, coal, t, r_t, r_j = self.parts(theta)
        lt, lj = float(np.mean(r_t ** 2)), float(np.mean(r_j ** 2))
        w = work / t
        c = 2.0 / self.n
        g = np.empty(5)
        g[0] = c * np.sum(r_t * w)
        g[1] = c * np.sum(r_t * (-self.log_f * w))
        g[2] = c * (np.sum(r_t * coal / t) + np.sum(r_j)) * (1.0 - phi)
        g[3] = c * np.sum(r_j)
        g[4] = c * np.sum(r_j * self.log_f)
        return lt + lj, (lt, lj), g


def loss_and_grad(data: FitDataset, params: ModelParams, itr_floor_us: float = 1.0):
    """Joint loss and its gradient w.r.t. the unconstrained fit coordinates."""
    itr, f, lat, en = data.arrays()
    fn = _LogLoss(itr, f, lat, en, itr_floor_us)
    theta = _to_theta(params)
    total, _, grad = fn.value_and_grad(theta)
    return total, grad, theta, fn


def _adam(fn: _LogLoss, theta0: np.ndarray, cfg: FitConfig):
    b1, b2, eps = 0.9, 0.999, 1e-8
    theta = theta0.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best_theta, best_loss = theta.copy(), math.inf
    stall = 0
    for k in range(1, cfg.max_iterations + 1):
        with np.errstate(all="ignore"):
            loss, _, g = fn.value_and_grad(theta)
        if not (math.isfinite(loss) and np.all(np.isfinite(g))):
            return None, math.inf
        if loss < best_loss - cfg.tolerance:
            best_loss, best_theta = loss, theta.copy()
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** k)
        v_hat = v / (1 - b2 ** k)
        theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    with np.errstate(all="ignore"):
        loss, _, _ = fn.value_and_grad(theta)
    if math.isfinite(loss) and loss < best_loss:
        best_loss, best_theta = loss, theta
    return best_theta, best_loss


def fit(data: FitDataset, init: ModelParams, cfg: FitConfig = FitConfig()) -> FitResult:
    """Fit ModelParams to a sweep dataset; restart 0 starts exactly at `init`."""
    itr, f, lat, en = data.arrays()
    fn = _LogLoss(itr, f, lat, en, cfg.itr_floor_us)
    theta_init = _to_theta(init)
    best = None
    restart_params: list[ModelParams | None] = []
    restart_losses: list[float] = []
    for r in range(cfg.restarts):
        theta0 = theta_init.copy()
        if r > 0:
            rng = np.random.default_rng(derive_seed(cfg.seed, "fit", r))
            theta0 = theta0 + rng.normal(0.0, cfg.jitter, size=theta0.size)
        theta, loss = _adam(fn, theta0, cfg)
        if theta is None:
            restart_params.append(None)
            restart_losses.append(math.inf)
            continue
        restart_params.append(_from_theta(theta))
        restart_losses.append(loss)
        if best is None or loss < best[1]:
            best = (theta, loss)
    if best is None:
        raise FitDiverged("fit diverged")
    lt, lj = fn.value(best[0])
    return FitResult(
        params=_from_theta(best[0]),
        latency_loss=lt,
        energy_loss=lj,
        restarts=cfg.restarts,
        converged=(lt + lj) <= cfg.loss_threshold,
        itr_floor_us=cfg.itr_floor_us,
        restart_params=tuple(restart_params),
        restart_losses=tuple(restart_losses),
    )


def initial_guess(data: FitDataset) -> ModelParams:
    """Crude data-driven starting point for `fit`."""
    itr, f, lat, en = data.arrays()
    lo = itr <= np.quantile(itr, 0.25)
    z = float(np.median(lat[lo] * f[lo]))
    return ModelParams(Z=max(z, 1e-6), alpha=0.0, phi=0.5, gamma=max(float(np.median(
        en / (0.5 * np.maximum(itr, 1.0) * 1e-6 * f ** 2))), 1e-12), beta=2.0)


def prediction_table(data: FitDataset, params: ModelParams, itr_floor_us: float = 1.0) -> list[dict]:
    """Per-row predicted vs observed values (the diagonal-plot data)."""
    out = []
    for r in data.rows:
        j_pred = floored_energy(params, r.config, itr_floor_us)
        out.append({
            "itr_us": r.config.itr_us,
            "dvfs_ghz": r.config.dvfs_ghz,
            "observed_latency_us": r.tail_latency_us,
            "predicted_latency_us": predict_latency(params, r.config),
            "observed_energy_j": r.energy_j,
            "predicted_energy_j": j_pred,
        })
    return out


def write_fit_json(path, result: FitResult, table: Sequence[dict] = ()):
    doc = result.to_dict()
    doc["rows"] = list(table)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def synthetic_dataset(params: ModelParams, configs: Sequence[Config], noise: float = 0.0,
                      seed: int = 0, itr_floor_us: float = 1.0) -> FitDataset:
    """Rows generated from the model itself, with multiplicative Gaussian noise."""
    rng = np.random.default_rng(seed)
    rows = []
    for c in configs:
        lat = predict_latency(params, c)
        en = floored_energy(params, c, itr_floor_us)
        if noise:
            lat *= 1.0 + noise * rng.standard_normal()
            en *= 1.0 + noise * rng.standard_normal()
        rows.append(FitRow(c, lat, en))
    return FitDataset(tuple(rows))


__all__ = [
    "ModelParams", "FitRow", "FitDataset", "FitConfig", "FitResult", "FitDiverged",
    "InsufficientData", "predict_latency", "predict_energy", "fit", "read_fit_csv",
    "initial_guess", "prediction_table", "write_fit_json", "synthetic_dataset", "floored_energy",
]
