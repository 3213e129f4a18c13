"""Kernel ridge / GP-mean regression read as a conditional kernel mean.

For a dataset (X, Y) the conditional mean embedding at x is
sum_i u_i(x) k_y(., Y_i) with u(x) = (G_x + n lambda' I)^{-1} k_x(x).
The point predictor is its pre-image sum_i u_i(x) Y_i. One embedding per
dataset is obtained by averaging u over the dataset's own inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .kernel_abc import MEDIAN_AUTO, resolve_kernel
from .kernels import EmpiricalKernelMean, KernelSpec, RegularizedSystem, SingularSystemError, gram
from .simulators import Dataset

DEFAULT_LAMBDA_PRIME = 1e-3


@dataclass(eq=False)
class GPModel:
    train_x: np.ndarray
    train_y: np.ndarray
    x_kernel: KernelSpec
    y_kernel: KernelSpec
    lambda_prime: float
    system: RegularizedSystem = field(repr=False)

    def weights(self, x) -> np.ndarray:
        """u(x) for each query row; shape (q, n)."""
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            x = x.reshape(-1, self.train_x.shape[1])
        if x.shape[1] != self.train_x.shape[1]:
            raise ValueError(f"query dimension {x.shape[1]} != training dimension {self.train_x.shape[1]}")
        return self.system.solve(gram(self.train_x, x, self.x_kernel)).T

    def predict_mean(self, x) -> np.ndarray:
        """sum_i u_i(x) Y_i; one row per query point."""
        return self.weights(x) @ self.train_y

    def dataset_embedding(self) -> EmpiricalKernelMean:
        u_bar = self.weights(self.train_x).mean(axis=0)
        return EmpiricalKernelMean(self.train_y, u_bar, self.y_kernel)

    def to_dict(self) -> dict:
        return {
            "train_x": self.train_x.tolist(),
            "train_y": self.train_y.tolist(),
            "x_bandwidth": self.x_kernel.bandwidth,
            "y_bandwidth": self.y_kernel.bandwidth,
            "lambda_prime": self.lambda_prime,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GPModel":
        ds = Dataset(np.asarray(d["train_x"]), np.asarray(d["train_y"]))
        return fit_gp(ds, KernelSpec(d["x_bandwidth"]), KernelSpec(d["y_bandwidth"]), d["lambda_prime"])


def _auto(choice, points) -> KernelSpec:
    if choice == MEDIAN_AUTO and points.shape[0] < 2:
        return KernelSpec(1.0)
    return resolve_kernel(choice, points)


def fit_gp(dataset: Dataset, x_kernel: Union[KernelSpec, str] = MEDIAN_AUTO,
           y_kernel: Union[KernelSpec, str] = MEDIAN_AUTO,
           lambda_prime: float = DEFAULT_LAMBDA_PRIME) -> GPModel:
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if not lambda_prime >= 0:
        raise ValueError("lambda_prime must be >= 0")
    xk = _auto(x_kernel, dataset.X)
    yk = _auto(y_kernel, dataset.Y)
    G = gram(dataset.X, dataset.X, xk)
    try:
        system = RegularizedSystem(G, n * lambda_prime)
    except SingularSystemError as exc:
        raise SingularSystemError(f"GP Gram matrix is singular (duplicate inputs with lambda'=0?): {exc}") from exc
    return GPModel(dataset.X.copy(), dataset.Y.copy(), xk, yk, float(lambda_prime), system)


def predict_mean(model: GPModel, x) -> np.ndarray:
    return model.predict_mean(x)


def dataset_embedding(model: GPModel) -> EmpiricalKernelMean:
    return model.dataset_embedding()
