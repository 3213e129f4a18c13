"""End-to-end model bridging: pre-learning, bridge training, prediction, studies.

Pre-learning embeds every training dataset twice: once through the ML model
(GP conditional mean or BNN posterior) and once through simulator calibration
(kernel ABC). All datasets use the same calibration seed, so their prior
draws coincide (common random numbers); kernels that must be shared across
datasets (k_theta, and k_y or k_xi for the ML side) are fixed once here.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional, Sequence, Union

import numpy as np

from . import bnn as bnn_mod
from .dist2dist import MEDIAN_AUTO, BridgingModel, fit
from .gp import DEFAULT_LAMBDA_PRIME, fit_gp
from .herding import Grid, HerdingConfig, herd
from .kernel_abc import AbcConfig, Calibration, PriorBox, run_calibration, sample_prior, stream
from .kernels import EmpiricalKernelMean, KernelSpec, bridging_norm_gap, median_heuristic, rkhs_distance_sq
from .simulators import Dataset, RegimeShiftConfig, Simulator, generate_dataset, make_simulator

log = logging.getLogger(__name__)

LAMBDA_GRID = (1e-6, 1e-4, 1e-2, 1e-1)
_POOL_MAX = 1000


# --- configuration -------------------------------------------------------------------


@dataclass(frozen=True)
class BnnSettings:
    hidden: tuple = (3, 3)
    prior_std: float = 1.0
    noise_std: float = 0.3
    steps: int = 20000
    burn_in: int = 10000
    thin: int = 100
    proposal_std: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    simulator: str = "toy"
    L: int = 30
    n: int = 30
    m: int = 200
    prior_lower: tuple = (0.0, 0.0)
    prior_upper: tuple = (4.0, 4.0)
    regime: RegimeShiftConfig = field(default_factory=lambda: RegimeShiftConfig(
        theta0=(1.0, 1.0), theta1=(2.0, 2.0), switch=100.0, n=30))
    delta: float = 0.01
    lam: float = 1e-6
    sigma_mu: Union[float, str] = MEDIAN_AUTO
    herd_samples: int = 100
    herd_grid: Optional[int] = None  # None: herd over the mean's atoms
    ml_path: str = "gp"
    gp_lambda_prime: float = DEFAULT_LAMBDA_PRIME
    bnn: BnnSettings = field(default_factory=BnnSettings)
    seed: int = 0
    data_seed: int = 1
    threads: int = 1

    def __post_init__(self) -> None:
        for name in ("L", "n", "m", "herd_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ml_path not in ("gp", "bnn"):
            raise ValueError(f"ml_path must be 'gp' or 'bnn', got {self.ml_path!r}")
        object.__setattr__(self, "prior_lower", tuple(float(v) for v in self.prior_lower))
        object.__setattr__(self, "prior_upper", tuple(float(v) for v in self.prior_upper))
        if self.regime.n != self.n:
            object.__setattr__(self, "regime", replace(self.regime, n=self.n))
        PriorBox(self.prior_lower, self.prior_upper)

    @property
    def prior(self) -> PriorBox:
        return PriorBox(self.prior_lower, self.prior_upper)

    def abc_config(self, theta_kernel: Union[KernelSpec, str] = "median-auto") -> AbcConfig:
        return AbcConfig(m=self.m, delta=self.delta, theta_kernel=theta_kernel, seed=self.seed,
                         threads=self.threads)

    def herding_config(self) -> HerdingConfig:
        if self.herd_grid is None:
            return HerdingConfig(self.herd_samples)
        return HerdingConfig(self.herd_samples, Grid(self.herd_grid, self.prior_lower, self.prior_upper))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regime"] = self.regime.to_dict()
        d["prior_lower"] = list(self.prior_lower)
        d["prior_upper"] = list(self.prior_upper)
        d["bnn"]["hidden"] = list(self.bnn.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "regime" in d:
            d["regime"] = RegimeShiftConfig(**d["regime"])
        if "bnn" in d:
            b = dict(d["bnn"])
            if "hidden" in b:
                b["hidden"] = tuple(b["hidden"])
            d["bnn"] = BnnSettings(**b)
        return cls(**d)

    @classmethod
    def assembly(cls, **overrides: Any) -> "ExperimentConfig":
        """The simple assembly-line study: uniform prior over [0,5]x[0,2]x[0,10]x[0,2]."""
        base = dict(
            simulator="assembly", L=100, n=50, m=100,
            prior_lower=(0.0, 0.0, 0.0, 0.0), prior_upper=(5.0, 2.0, 10.0, 2.0),
            regime=RegimeShiftConfig(theta0=(2.0, 0.5, 5.0, 1.0), theta1=(3.5, 0.5, 7.0, 1.0), switch=110.0),
            lam=1e-6, herd_samples=100,
        )
        base.update(overrides)
        return cls(**base)


def generate_datasets(config: ExperimentConfig, sim: Optional[Simulator] = None, count: Optional[int] = None,
                      start: int = 0) -> list:
    sim = sim or make_simulator(config.simulator)
    count = config.L if count is None else count
    return [generate_dataset(l, config.regime, sim, config.data_seed) for l in range(start, start + count)]


# --- ML-side embeddings ---------------------------------------------------------------------


@dataclass
class Standardizer:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, datasets: Sequence[Dataset]) -> "Standardizer":
        X = np.vstack([d.X for d in datasets])
        Y = np.vstack([d.Y for d in datasets])
        sx, sy = X.std(axis=0), Y.std(axis=0)
        return cls(X.mean(axis=0), np.where(sx > 0, sx, 1.0), Y.mean(axis=0), np.where(sy > 0, sy, 1.0))

    def transform(self, d: Dataset) -> Dataset:
        return Dataset((d.X - self.x_mean) / self.x_std, (d.Y - self.y_mean) / self.y_std, d.meta)

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}


@dataclass
class Embedder:
    """Maps a dataset to (ML model, embedding) with kernels frozen at pre-learning."""

    ml_path: str
    kernel: KernelSpec  # k_y for the GP path, k_xi for the BNN path
    gp_lambda_prime: float = DEFAULT_LAMBDA_PRIME
    bnn: Optional[BnnSettings] = None
    scaler: Optional[Standardizer] = None
    seed: int = 0

    def fit_model(self, dataset: Dataset):
        if self.ml_path == "gp":
            return fit_gp(dataset, "median-auto", self.kernel, self.gp_lambda_prime)
        return _fit_bnn(dataset, self.bnn, self.scaler, self.seed)

    def embed_model(self, model) -> EmpiricalKernelMean:
        if self.ml_path == "gp":
            return model.dataset_embedding()
        return bnn_mod.bnn_embedding(model, self.kernel)

    def predict(self, model, x) -> np.ndarray:
        if self.ml_path == "gp":
            return model.predict_mean(x)
        xs = (np.asarray(x, dtype=float).reshape(-1, self.scaler.x_mean.shape[0]) - self.scaler.x_mean) / self.scaler.x_std
        return model.predict_mean(xs) * self.scaler.y_std + self.scaler.y_mean

    def to_dict(self) -> dict:
        d = {"ml_path": self.ml_path, "bandwidth": self.kernel.bandwidth,
             "gp_lambda_prime": self.gp_lambda_prime, "seed": self.seed}
        if self.ml_path == "bnn":
            d["bnn"] = asdict(self.bnn)
            d["scaler"] = self.scaler.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Embedder":
        b = s = None
        if d["ml_path"] == "bnn":
            raw = dict(d["bnn"])
            raw["hidden"] = tuple(raw["hidden"])
            b = BnnSettings(**raw)
            s = Standardizer(**{k: np.asarray(v, dtype=float) for k, v in d["scaler"].items()})
        return cls(d["ml_path"], KernelSpec(d["bandwidth"]), d["gp_lambda_prime"], b, s, d["seed"])


def _fit_bnn(dataset: Dataset, settings: BnnSettings, scaler: Standardizer, seed: int):
    arch = bnn_mod.BnnArchitecture((dataset.d_x, *settings.hidden, dataset.d_y))
    return bnn_mod.sample_posterior_mh(
        scaler.transform(dataset), arch, settings.prior_std, settings.noise_std,
        settings.steps, settings.burn_in, settings.thin, seed, settings.proposal_std)


def _with_context(exc: Exception, msg: str) -> Exception:
    """Same exception type with a prefixed message, so callers can still dispatch on it."""
    try:
        return type(exc)(f"{msg}: {exc}")
    except Exception:
        return RuntimeError(f"{msg}: {exc}")


def _pooled(points: np.ndarray, seed: int) -> np.ndarray:
    if points.shape[0] > _POOL_MAX:
        idx = np.sort(stream(seed, 7).choice(points.shape[0], _POOL_MAX, replace=False))
        points = points[idx]
    return points


# --- pre-learning ------------------------------------------------------------------------------


@dataclass
class PreLearnResult:
    ml_means: list
    sim_means: list
    ml_models: list
    calibrations: list
    simulator_calls: int
    embedder: Embedder
    theta_kernel: KernelSpec

    def __len__(self) -> int:
        return len(self.sim_means)

    def subset(self, indices: Sequence[int]) -> "PreLearnResult":
        idx = list(indices)
        return PreLearnResult(
            [self.ml_means[i] for i in idx], [self.sim_means[i] for i in idx],
            [self.ml_models[i] for i in idx], [self.calibrations[i] for i in idx],
            sum(self.calibrations[i].simulator_calls for i in idx), self.embedder, self.theta_kernel)


def theta_kernel_for(config: ExperimentConfig) -> KernelSpec:
    """k_theta bandwidth: median heuristic over the (shared) calibration prior draws."""
    draws = sample_prior(config.prior, config.m, config.seed)
    return median_heuristic(draws) if config.m > 1 else KernelSpec(1.0)


def pre_learn(datasets: Sequence[Dataset], sim: Simulator, config: ExperimentConfig) -> PreLearnResult:
    if not datasets:
        raise ValueError("need at least one dataset")
    theta_kernel = theta_kernel_for(config)
    abc = config.abc_config(theta_kernel)
    start_calls = sim.calls

    if config.ml_path == "gp":
        pooled_y = _pooled(np.vstack([d.Y for d in datasets]), config.seed)
        kernel = median_heuristic(pooled_y) if pooled_y.shape[0] > 1 else KernelSpec(1.0)
        embedder = Embedder("gp", kernel, config.gp_lambda_prime, seed=config.seed)
        models = []
        for l, d in enumerate(datasets):
            try:
                models.append(embedder.fit_model(d))
            except Exception as exc:
                raise _with_context(exc, f"ML model failed on dataset {l}") from exc
    else:
        scaler = Standardizer.fit(datasets)
        models = []
        for l, d in enumerate(datasets):
            try:
                models.append(_fit_bnn(d, config.bnn, scaler, config.seed))
            except Exception as exc:
                raise _with_context(exc, f"BNN sampling failed on dataset {l}") from exc
            log.info("dataset %d: MH acceptance %.2f", l, models[-1].acceptance_rate)
        pooled = _pooled(np.vstack([p.samples for p in models]), config.seed)
        embedder = Embedder("bnn", median_heuristic(pooled), config.gp_lambda_prime, config.bnn, scaler, config.seed)
    ml_means = [embedder.embed_model(mdl) for mdl in models]

    calibrations = []
    for l, d in enumerate(datasets):
        try:
            calibrations.append(run_calibration(sim, d, config.prior, abc))
        except Exception as exc:
            raise _with_context(exc, f"calibration failed on dataset {l}") from exc
        log.debug("dataset %d calibrated (%d simulator calls)", l, calibrations[-1].simulator_calls)
    calls = sim.calls - start_calls
    expected = sum(config.m * len(d) for d in datasets)
    if calls != expected:
        raise RuntimeError(f"simulator ledger mismatch: {calls} calls, expected {expected}")
    return PreLearnResult(ml_means, [c.posterior for c in calibrations], models, calibrations, calls,
                          embedder, theta_kernel)


def train_bridge(result: PreLearnResult, lam: float, sigma_mu: Union[float, str] = MEDIAN_AUTO) -> BridgingModel:
    try:
        return fit(result.ml_means, result.sim_means, lam, sigma_mu)
    except Exception as exc:
        raise _with_context(exc, f"training the bridging function on {len(result)} datasets failed") from exc


# --- prediction -------------------------------------------------------------------------------


@dataclass
class BridgePrediction:
    y_hat: np.ndarray
    theta_samples: np.ndarray
    mu_mb: EmpiricalKernelMean
    v: np.ndarray
    diagnostics: dict


def bridge_predict(model: BridgingModel, embedder: Embedder, new_dataset: Dataset, x_new,
                   herding: HerdingConfig, sim: Optional[Simulator] = None) -> BridgePrediction:
    """Prediction and simulator parameters for a new dataset without running the simulator.

    Pass ``sim`` to have the (zero) change in its call ledger checked and reported.
    """
    if len(new_dataset) == 0:
        raise ValueError("new dataset is empty")
    before = sim.calls if sim is not None else None
    ml_model = embedder.fit_model(new_dataset)
    y_hat = embedder.predict(ml_model, x_new)
    mu_ml = embedder.embed_model(ml_model)
    v = model.coefficients(mu_ml)
    mu_mb = model.predict(mu_ml)
    theta = herd(mu_mb, herding)
    diagnostics: dict = {"v_sum": float(v.sum())}
    if sim is not None:
        delta = sim.calls - before
        diagnostics["simulator_calls"] = delta
        if delta != 0:
            raise RuntimeError(f"bridge_predict ran the simulator {delta} times")
    return BridgePrediction(y_hat, theta, mu_mb, v, diagnostics)


# --- leave-one-out studies -------------------------------------------------------------------


@dataclass
class Fold:
    held_out: int
    v: np.ndarray
    gap: float
    unit_norm_gap: float
    mu_mb: EmpiricalKernelMean = field(repr=False)


def loo_folds(pool: PreLearnResult, lam: float, sigma_mu: Union[float, str] = MEDIAN_AUTO,
              indices: Optional[Sequence[int]] = None) -> list:
    """Hold out each dataset of ``indices`` in turn, train on the rest of ``indices``."""
    idx = list(range(len(pool))) if indices is None else list(indices)
    if len(idx) < 2:
        raise ValueError("leave-one-out needs at least two datasets")
    folds = []
    for h in idx:
        train = pool.subset([i for i in idx if i != h])
        model = train_bridge(train, lam, sigma_mu)
        v = model.coefficients(pool.ml_means[h])
        mu_mb = model.predict(pool.ml_means[h])
        g = bridging_norm_gap(mu_mb, pool.sim_means[h])
        folds.append(Fold(h, v, g.exact, g.unit_norm, mu_mb))
    return folds


def prior_only_mean(config: ExperimentConfig, theta_kernel: KernelSpec) -> EmpiricalKernelMean:
    """Uniform weights over m fresh prior draws (independent of the calibration draws)."""
    draws = sample_prior(config.prior, config.m, stream(config.seed, 1))
    return EmpiricalKernelMean.uniform(draws, theta_kernel)


@dataclass
class ConvergenceRow:
    L: int
    mean_gap: float
    std_gap: float
    baseline: float


def convergence_table(pool: PreLearnResult, config: ExperimentConfig, L_grid: Sequence[int]) -> list:
    """For each L: leave-one-out over the first L + 1 datasets of the pool."""
    if max(L_grid) + 1 > len(pool):
        raise ValueError(f"L up to {max(L_grid)} needs {max(L_grid) + 1} datasets, pool has {len(pool)}")
    prior_mean = prior_only_mean(config, pool.theta_kernel)
    rows = []
    for L in L_grid:
        idx = list(range(L + 1))
        folds = loo_folds(pool, config.lam, config.sigma_mu, idx)
        gaps = np.array([f.gap for f in folds])
        base = np.array([rkhs_distance_sq(prior_mean, pool.sim_means[h]) for h in idx])
        rows.append(ConvergenceRow(int(L), float(gaps.mean()), float(gaps.std()), float(base.mean())))
    return rows


def convergence_experiment(config: ExperimentConfig, L_grid: Sequence[int],
                           sim: Optional[Simulator] = None) -> list:
    sim = sim or make_simulator(config.simulator)
    datasets = generate_datasets(config, sim, count=max(L_grid) + 1)
    pool = pre_learn(datasets, sim, config)
    return convergence_table(pool, config, L_grid)


def select_lambda(pool: PreLearnResult, grid: Sequence[float] = LAMBDA_GRID,
                  sigma_mu: Union[float, str] = MEDIAN_AUTO) -> tuple:
    """Pick lambda from ``grid`` by mean leave-one-out gap; returns (best, {lam: gap})."""
    scores = {}
    for lam in grid:
        try:
            scores[lam] = float(np.mean([f.gap for f in loo_folds(pool, lam, sigma_mu)]))
        except Exception as exc:  # singular at tiny lambda: skip that grid point
            log.warning("lambda=%g skipped: %s", lam, exc)
    if not scores:
        raise RuntimeError("no lambda in the grid produced a solvable bridging system")
    return min(scores, key=scores.get), scores
