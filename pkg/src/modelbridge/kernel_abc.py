"""Kernel ABC: posterior kernel means over simulator parameters.

Given prior draws theta_j and pseudo-datasets Ybar_j simulated at theta_j,
the posterior embedding is sum_j w_j k_theta(., theta_j) with

    w = (G_y + m * delta * I)^{-1} k_y(Y_obs)

where G_y is the Gram matrix of the (stacked) pseudo-datasets and k_y(Y_obs)
their kernel similarities to the observed dataset.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Union

import numpy as np

from .kernels import EmpiricalKernelMean, KernelSpec, RegularizedSystem, as_points, gram, median_heuristic

if TYPE_CHECKING:
    from .simulators import Dataset, Simulator

MEDIAN_AUTO = "median-auto"
DEFAULT_DELTA = 0.01

KernelChoice = Union[KernelSpec, str]


def resolve_kernel(choice: KernelChoice, points) -> KernelSpec:
    if isinstance(choice, KernelSpec):
        return choice
    if choice == MEDIAN_AUTO:
        return median_heuristic(points)
    raise ValueError(f"kernel must be a KernelSpec or {MEDIAN_AUTO!r}, got {choice!r}")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream for (seed, *key); schedule-independent."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


@dataclass(frozen=True)
class PriorBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("prior bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError(f"prior box needs lower < upper elementwise, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1, self.dim)
        return np.all((theta >= self.lower) & (theta <= self.upper), axis=1)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


def sample_prior(prior: PriorBox, m: int, seed: Union[int, np.random.Generator]) -> np.ndarray:
    """m i.i.d. uniform draws from the box, shape (m, d_theta)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random((m, prior.dim))
    return prior.lower + u * (prior.upper - prior.lower)


@dataclass(frozen=True)
class AbcConfig:
    m: int = 100
    delta: float = DEFAULT_DELTA
    y_kernel: KernelChoice = MEDIAN_AUTO
    theta_kernel: KernelChoice = MEDIAN_AUTO
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not self.delta >= 0:
            raise ValueError("delta must be >= 0")

    def to_dict(self) -> dict:
        def k(c):
            return c.bandwidth if isinstance(c, KernelSpec) else c

        return {"m": self.m, "delta": self.delta, "y_kernel": k(self.y_kernel),
                "theta_kernel": k(self.theta_kernel), "seed": self.seed}


def kernel_abc(prior_samples, pseudo_data, observed, config: AbcConfig) -> EmpiricalKernelMean:
    """Posterior embedding over theta from prior draws and their pseudo-data.

    ``pseudo_data`` is (m, n * d_y): one stacked pseudo-dataset per row,
    simulated on the same inputs as ``observed`` (length n * d_y).
    """
    theta = as_points(prior_samples)
    Ybar = np.asarray(pseudo_data, dtype=float)
    if Ybar.ndim == 1:
        Ybar = Ybar.reshape(-1, 1)
    y_obs = np.asarray(observed, dtype=float).reshape(1, -1)
    m = theta.shape[0]
    if Ybar.shape[0] != m:
        raise ValueError(f"{m} prior samples but {Ybar.shape[0]} pseudo-datasets")
    if Ybar.shape[1] != y_obs.shape[1]:
        raise ValueError(f"pseudo-data length {Ybar.shape[1]} != observed length {y_obs.shape[1]}")

    if m == 1 and config.y_kernel == MEDIAN_AUTO:
        y_spec = KernelSpec(max(float(np.linalg.norm(Ybar[0] - y_obs[0])), 1.0))
    else:
        y_spec = resolve_kernel(config.y_kernel, Ybar)
    if m == 1 and config.theta_kernel == MEDIAN_AUTO:
        theta_spec = KernelSpec(1.0)
    else:
        theta_spec = resolve_kernel(config.theta_kernel, theta)

    G = gram(Ybar, Ybar, y_spec)
    k = gram(Ybar, y_obs, y_spec)[:, 0]
    w = RegularizedSystem(G, m * config.delta).solve(k)
    return EmpiricalKernelMean(theta, w, theta_spec)


@dataclass
class Calibration:
    """Result of ``run_calibration``: posterior mean plus run metadata."""

    posterior: EmpiricalKernelMean
    config: AbcConfig
    simulator_calls: int
    prior_samples: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        d = self.posterior.to_dict()
        d["metadata"] = {
            "m": self.config.m,
            "delta": self.config.delta,
            "seed": self.config.seed,
            "simulator_calls": self.simulator_calls,
        }
        return d


def simulate_pseudo_data(sim: "Simulator", X: np.ndarray, thetas: np.ndarray, seed: int,
                         threads: int = 1) -> np.ndarray:
    """Stacked pseudo-datasets, row j simulated at thetas[j] with stream (seed, j)."""

    def one(j: int) -> np.ndarray:
        try:
            return np.asarray(sim(X, thetas[j], stream(seed, j)), dtype=float).reshape(-1)
        except Exception as exc:
            raise RuntimeError(f"simulator failed at theta_{j} = {thetas[j].tolist()}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(len(thetas))))
    else:
        rows = [one(j) for j in range(len(thetas))]
    return np.vstack(rows)


def run_calibration(sim: "Simulator", dataset: "Dataset", prior: PriorBox, config: AbcConfig) -> Calibration:
    """Simulator calibration for one dataset: prior draws, pseudo-data, kernel ABC."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if prior.dim != sim.d_theta:
        raise ValueError(f"prior has dimension {prior.dim}, simulator expects {sim.d_theta}")
    thetas = sample_prior(prior, config.m, config.seed)
    before = sim.calls
    Ybar = simulate_pseudo_data(sim, dataset.X, thetas, config.seed, config.threads)
    calls = sim.calls - before
    posterior = kernel_abc(thetas, Ybar, dataset.Y.reshape(-1), config)
    return Calibration(posterior, config, calls, thetas)
