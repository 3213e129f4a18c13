"""Small ReLU Bayesian neural network sampled by random-walk Metropolis-Hastings.

Weight vector layout (fixed so k_xi compares like with like): layers in order;
within a layer the (out, in) weight matrix row-major, then that layer's bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .kernel_abc import MEDIAN_AUTO, resolve_kernel
from .kernels import EmpiricalKernelMean, KernelSpec
from .simulators import Dataset


@dataclass(frozen=True)
class BnnArchitecture:
    widths: tuple = (1, 3, 3, 1)
    bias: Optional[tuple] = None  # per layer; default all True

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 3:
            raise ValueError("need at least one hidden layer (widths: in, hidden..., out)")
        if min(widths) < 1:
            raise ValueError("layer widths must be >= 1")
        bias = (True,) * (len(widths) - 1) if self.bias is None else tuple(bool(b) for b in self.bias)
        if len(bias) != len(widths) - 1:
            raise ValueError("one bias flag per layer")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "bias", bias)

    @property
    def n_params(self) -> int:
        return sum(i * o + (o if b else 0) for i, o, b in zip(self.widths[:-1], self.widths[1:], self.bias))

    def unflatten(self, xi) -> list:
        xi = np.asarray(xi, dtype=float).reshape(-1)
        if xi.shape[0] != self.n_params:
            raise ValueError(f"weight vector has length {xi.shape[0]}, architecture needs {self.n_params}")
        layers, pos = [], 0
        for i, o, b in zip(self.widths[:-1], self.widths[1:], self.bias):
            W = xi[pos:pos + i * o].reshape(o, i)
            pos += i * o
            c = None
            if b:
                c = xi[pos:pos + o]
                pos += o
            layers.append((W, c))
        return layers

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "bias": list(self.bias)}


def bnn_forward(arch: BnnArchitecture, xi, x) -> np.ndarray:
    """f(x; xi) for each row of x, shape (q, d_y). ReLU on hidden layers only."""
    h = np.asarray(x, dtype=float)
    if h.ndim <= 1:
        h = h.reshape(-1, arch.widths[0])
    if h.shape[1] != arch.widths[0]:
        raise ValueError(f"input dimension {h.shape[1]} != {arch.widths[0]}")
    layers = arch.unflatten(xi)
    for k, (W, c) in enumerate(layers):
        h = h @ W.T
        if c is not None:
            h = h + c
        if k < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def gaussian_log_posterior(predict: Callable[[np.ndarray, np.ndarray], np.ndarray], X, Y,
                           prior_std: float, noise_std: float) -> Callable[[np.ndarray], float]:
    """log N(Y | predict(xi, X), noise_std^2) + log N(xi | 0, prior_std^2), up to constants."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)

    def logp(xi: np.ndarray) -> float:
        lp = -0.5 * float(xi @ xi) / prior_std**2
        if Y.size:
            r = Y - predict(xi, X).reshape(Y.shape)
            lp -= 0.5 * float(np.sum(r * r)) / noise_std**2
        return lp

    return logp


@dataclass
class ChainResult:
    samples: np.ndarray
    acceptance_rate: float
    log_density: np.ndarray  # at every step, post-move


def random_walk_mh(log_density: Callable[[np.ndarray], float], x0, steps: int, burn_in: int, thin: int,
                   proposal_std: float, rng: np.random.Generator) -> ChainResult:
    if steps <= burn_in:
        raise ValueError("steps must exceed burn_in")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    x = np.array(x0, dtype=float).reshape(-1)
    lp = log_density(x)
    if not np.isfinite(lp):
        raise ValueError("log posterior is not finite at the initial state")
    noise = rng.normal(0.0, proposal_std, size=(steps, x.shape[0]))
    log_u = np.log(rng.random(steps))
    kept, trace, accepted = [], np.empty(steps), 0
    for t in range(steps):
        prop = x + noise[t]
        lp_prop = log_density(prop)
        if log_u[t] < lp_prop - lp:
            x, lp = prop, lp_prop
            accepted += 1
        trace[t] = lp
        if t >= burn_in and (t - burn_in) % thin == 0:
            kept.append(x.copy())
    return ChainResult(np.array(kept), accepted / steps, trace)


@dataclass
class BnnPosterior:
    arch: BnnArchitecture
    samples: np.ndarray
    acceptance_rate: float
    seed: int

    def predict_mean(self, x) -> np.ndarray:
        """Posterior predictive mean: average forward pass over samples."""
        return np.mean([bnn_forward(self.arch, xi, x) for xi in self.samples], axis=0)

    def to_dict(self) -> dict:
        return {"arch": self.arch.to_dict(), "samples": self.samples.tolist(),
                "acceptance_rate": self.acceptance_rate, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "BnnPosterior":
        arch = BnnArchitecture(tuple(d["arch"]["widths"]), tuple(d["arch"]["bias"]))
        return cls(arch, np.asarray(d["samples"], dtype=float), d["acceptance_rate"], d["seed"])


def sample_posterior_mh(dataset: Dataset, arch: BnnArchitecture, prior_std: float = 1.0, noise_std: float = 0.3,
                        steps: int = 20000, burn_in: int = 10000, thin: int = 100, seed: int = 0,
                        proposal_std: Optional[float] = None) -> BnnPosterior:
    """Random-walk MH on the BNN weights; Gaussian likelihood, isotropic Gaussian prior.

    The chain starts from a prior draw. Default proposal std is 0.05 * prior_std.
    """
    if len(dataset) and (dataset.d_x != arch.widths[0] or dataset.d_y != arch.widths[-1]):
        raise ValueError("dataset dimensions do not match the architecture")
    rng = np.random.default_rng(seed)
    logp = gaussian_log_posterior(lambda xi, X: bnn_forward(arch, xi, X), dataset.X, dataset.Y,
                                  prior_std, noise_std)
    x0 = rng.normal(0.0, prior_std, size=arch.n_params)
    step = 0.05 * prior_std if proposal_std is None else proposal_std
    chain = random_walk_mh(logp, x0, steps, burn_in, thin, step, rng)
    return BnnPosterior(arch, chain.samples, chain.acceptance_rate, seed)


def bnn_embedding(posterior: BnnPosterior, xi_kernel: Union[KernelSpec, str] = MEDIAN_AUTO) -> EmpiricalKernelMean:
    """Uniform 1/m weights over the posterior samples."""
    samples = posterior.samples
    if samples.shape[0] == 0:
        raise ValueError("posterior has no samples")
    if xi_kernel == MEDIAN_AUTO and samples.shape[0] < 2:
        spec = KernelSpec(1.0)
    else:
        spec = resolve_kernel(xi_kernel, samples)
    return EmpiricalKernelMean.uniform(samples, spec)


def pooled_bandwidth(sample_sets: Sequence[np.ndarray], max_points: int = 1000, seed: int = 0) -> KernelSpec:
    """Median heuristic over a deterministic subsample of pooled samples."""
    pooled = np.vstack(sample_sets)
    if pooled.shape[0] > max_points:
        idx = np.sort(np.random.default_rng(seed).choice(pooled.shape[0], max_points, replace=False))
        pooled = pooled[idx]
    return resolve_kernel(MEDIAN_AUTO, pooled)
