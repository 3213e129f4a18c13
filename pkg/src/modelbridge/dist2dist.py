"""Kernel ridge regression from kernel means to kernel means.

The meta-kernel on embeddings is

    kappa(mu, mu') = exp(-|mu - mu'|_H^2 / (2 sigma_mu^2))

with the full three-term RKHS distance. For a new input embedding the
prediction is sum_l v_l * mu_sim_l, v = (G_mu + lambda L I)^{-1} k_mu(mu_new),
which is the minimiser of the usual ridge objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .kernels import (
    EmpiricalKernelMean,
    RegularizedSystem,
    SingularSystemError,
    inner_product,
    rkhs_distance_sq,
)

FORMAT_VERSION = "mb-v1"
MEDIAN_AUTO = "median-auto"


def kappa(a: EmpiricalKernelMean, b: EmpiricalKernelMean, sigma_mu: float) -> float:
    if not sigma_mu > 0:
        raise ValueError("sigma_mu must be > 0")
    return math.exp(-rkhs_distance_sq(a, b) / (2.0 * sigma_mu**2))


def _check_family(means: Sequence[EmpiricalKernelMean], what: str) -> None:
    ref = means[0]
    for i, mu in enumerate(means[1:], start=1):
        if mu.kernel != ref.kernel or mu.dim != ref.dim:
            raise ValueError(f"{what}[{i}] is incompatible with {what}[0] (kernel or dimension differs)")


def distance_matrix(means: Sequence[EmpiricalKernelMean]) -> np.ndarray:
    """Pairwise squared RKHS distances."""
    L = len(means)
    ip = np.empty((L, L))
    for i in range(L):
        for j in range(i, L):
            ip[i, j] = ip[j, i] = inner_product(means[i], means[j])
    diag = np.diag(ip)
    return np.maximum(diag[:, None] - 2.0 * ip + diag[None, :], 0.0)


def median_sigma_mu(sq_dist: np.ndarray) -> float:
    """Median heuristic on pairwise RKHS distances; 1.0 when there is a single mean."""
    L = sq_dist.shape[0]
    if L < 2:
        return 1.0
    iu = np.triu_indices(L, k=1)
    med = float(np.median(np.sqrt(sq_dist[iu])))
    if not med > 0:
        raise ValueError("all training embeddings coincide; cannot pick sigma_mu by median heuristic")
    return med


@dataclass(eq=False)
class BridgingModel:
    train_inputs: list
    train_outputs: list
    lam: float
    sigma_mu: float
    gram: np.ndarray = field(repr=False)
    system: RegularizedSystem = field(repr=False)
    _self_ip: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.train_inputs)

    def kernel_vector(self, mu: EmpiricalKernelMean) -> np.ndarray:
        ref = self.train_inputs[0]
        if mu.kernel != ref.kernel or mu.dim != ref.dim:
            raise ValueError("input embedding is incompatible with the training inputs")
        aa = inner_product(mu, mu)
        d2 = np.array([max(aa - 2.0 * inner_product(mu, b) + bb, 0.0)
                       for b, bb in zip(self.train_inputs, self._self_ip)])
        return np.exp(-d2 / (2.0 * self.sigma_mu**2))

    def coefficients(self, mu: EmpiricalKernelMean) -> np.ndarray:
        """v = (G_mu + lambda L I)^{-1} k_mu(mu)."""
        return self.system.solve(self.kernel_vector(mu))

    def predict(self, mu: EmpiricalKernelMean) -> EmpiricalKernelMean:
        return flatten(self.train_outputs, self.coefficients(mu))

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "lambda": self.lam,
            "sigma_mu": self.sigma_mu,
            "train_inputs": [m.to_dict() for m in self.train_inputs],
            "train_outputs": [m.to_dict() for m in self.train_outputs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BridgingModel":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported bridging model version {d.get('version')!r}")
        return fit([EmpiricalKernelMean.from_dict(m) for m in d["train_inputs"]],
                   [EmpiricalKernelMean.from_dict(m) for m in d["train_outputs"]],
                   d["lambda"], d["sigma_mu"])


def flatten(outputs: Sequence[EmpiricalKernelMean], v: np.ndarray) -> EmpiricalKernelMean:
    """sum_l v_l * outputs[l] as one mean: concatenated atoms, weights v_l * w_l."""
    atoms = np.vstack([o.atoms for o in outputs])
    weights = np.concatenate([vl * o.weights for vl, o in zip(v, outputs)])
    return EmpiricalKernelMean(atoms, weights, outputs[0].kernel)


def fit(inputs: Sequence[EmpiricalKernelMean], outputs: Sequence[EmpiricalKernelMean],
        lam: float, sigma_mu: Union[float, str] = MEDIAN_AUTO) -> BridgingModel:
    inputs, outputs = list(inputs), list(outputs)
    if len(inputs) != len(outputs):
        raise ValueError(f"{len(inputs)} inputs but {len(outputs)} outputs")
    if not inputs:
        raise ValueError("need at least one training pair")
    if not lam >= 0:
        raise ValueError("lambda must be >= 0")
    _check_family(inputs, "inputs")
    _check_family(outputs, "outputs")
    L = len(inputs)
    sq = distance_matrix(inputs)
    if sigma_mu == MEDIAN_AUTO:
        sigma_mu = median_sigma_mu(sq)
    sigma_mu = float(sigma_mu)
    if not sigma_mu > 0:
        raise ValueError("sigma_mu must be > 0")
    G = np.exp(-sq / (2.0 * sigma_mu**2))
    try:
        system = RegularizedSystem(G, lam * L)
    except SingularSystemError as exc:
        raise SingularSystemError(f"bridging Gram matrix (L={L}, lambda={lam:g}) is singular: {exc}") from exc
    self_ip = np.array([inner_product(m, m) for m in inputs])
    return BridgingModel(inputs, outputs, float(lam), sigma_mu, G, system, self_ip)


def predict(model: BridgingModel, mu: EmpiricalKernelMean) -> EmpiricalKernelMean:
    return model.predict(mu)
