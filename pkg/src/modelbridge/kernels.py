"""Gaussian kernels, empirical kernel means and regularized Gram solves.

Every other module builds on the handful of primitives here:

- ``gauss_kernel`` / ``gram``: k(x, y) = exp(-|x - y|^2 / (2 sigma^2))
- ``median_heuristic``: bandwidth from the median pairwise distance
- ``EmpiricalKernelMean``: sum_j w_j k(., atom_j), weights unconstrained
- ``inner_product`` / ``rkhs_distance_sq`` / ``bridging_norm_gap``
- ``RegularizedSystem`` / ``solve_regularized``: (G + reg I) w = rhs
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Any, NamedTuple

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack
from scipy.spatial.distance import cdist, pdist

__all__ = [
    "NumericalError",
    "SingularSystemError",
    "KernelSpec",
    "EmpiricalKernelMean",
    "GramSolveConfig",
    "RegularizedSystem",
    "NormGap",
    "as_points",
    "gauss_kernel",
    "gram",
    "median_heuristic",
    "inner_product",
    "rkhs_distance_sq",
    "bridging_norm_gap",
    "solve_regularized",
]


class NumericalError(RuntimeError):
    """A linear-algebra step failed (singular system, residual too large)."""


class SingularSystemError(NumericalError):
    pass


def as_points(x: Any) -> np.ndarray:
    """Coerce to an (m, d) float array. A 1-D input is m points in R^1."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"points must be 1-D or 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel bandwidth, in the units of the point coordinates."""

    bandwidth: float

    def __post_init__(self) -> None:
        bw = float(self.bandwidth)
        if not (math.isfinite(bw) and bw > 0):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", bw)


def gram(a: Any, b: Any, spec: KernelSpec) -> np.ndarray:
    """Kernel matrix K[i, j] = k(a_i, b_j) for point sets a (p, d) and b (q, d)."""
    a = as_points(a)
    b = as_points(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    # cdist sums squared coordinate differences directly, so identical rows give exactly 0
    sq = cdist(a, b, "sqeuclidean")
    return np.exp(-sq / (2.0 * spec.bandwidth**2))


def gauss_kernel(x: Any, y: Any, spec: KernelSpec) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("gauss_kernel takes two single points")
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    sq = float(np.sum((x - y) ** 2))
    return math.exp(-sq / (2.0 * spec.bandwidth**2))


def median_heuristic(points: Any) -> KernelSpec:
    """Bandwidth = median Euclidean distance over distinct unordered pairs."""
    pts = as_points(points)
    if pts.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    med = float(np.median(pdist(pts, "euclidean")))
    if not med > 0:
        raise ValueError("median pairwise distance is zero; points are (mostly) identical")
    return KernelSpec(med)


@dataclass(frozen=True, eq=False)
class EmpiricalKernelMean:
    """The RKHS element sum_j weights[j] * k(., atoms[j]).

    Weights are arbitrary finite reals; kernel-ABC weights can be negative
    and need not sum to one.
    """

    atoms: np.ndarray
    weights: np.ndarray
    kernel: KernelSpec

    def __post_init__(self) -> None:
        atoms = as_points(self.atoms)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if atoms.shape[0] < 1:
            raise ValueError("an empirical kernel mean needs at least one atom")
        if weights.shape[0] != atoms.shape[0]:
            raise ValueError(f"{atoms.shape[0]} atoms but {weights.shape[0]} weights")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, atoms: Any, kernel: KernelSpec) -> "EmpiricalKernelMean":
        atoms = as_points(atoms)
        m = atoms.shape[0]
        return cls(atoms, np.full(m, 1.0 / m), kernel)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return self.atoms.shape[0]

    def weighted_mean(self) -> np.ndarray:
        """sum_j w_j atom_j, the plug-in posterior mean when weights sum to ~1."""
        return self.weights @ self.atoms

    def evaluate(self, points: Any) -> np.ndarray:
        """Evaluate the RKHS function at each of the given points."""
        return gram(points, self.atoms, self.kernel) @ self.weights

    def scaled(self, c: float) -> "EmpiricalKernelMean":
        return EmpiricalKernelMean(self.atoms, c * self.weights, self.kernel)

    def to_dict(self) -> dict:
        return {
            "bandwidth": self.kernel.bandwidth,
            "atoms": self.atoms.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmpiricalKernelMean":
        return cls(np.asarray(d["atoms"], dtype=float), np.asarray(d["weights"], dtype=float),
                   KernelSpec(d["bandwidth"]))


def _check_compatible(a: EmpiricalKernelMean, b: EmpiricalKernelMean) -> None:
    if a.kernel != b.kernel:
        raise ValueError(f"kernel mismatch: {a.kernel} vs {b.kernel}")
    if a.dim != b.dim:
        raise ValueError(f"atom dimension mismatch: {a.dim} vs {b.dim}")


def inner_product(a: EmpiricalKernelMean, b: EmpiricalKernelMean) -> float:
    _check_compatible(a, b)
    return float(a.weights @ gram(a.atoms, b.atoms, a.kernel) @ b.weights)


def rkhs_distance_sq(a: EmpiricalKernelMean, b: EmpiricalKernelMean) -> float:
    d = inner_product(a, a) - 2.0 * inner_product(a, b) + inner_product(b, b)
    # anything below zero is cancellation error; the true value is nonnegative
    return max(d, 0.0)


class NormGap(NamedTuple):
    unit_norm: float  # 2 (1 - <mb, sim>), valid when both means have unit norm
    exact: float  # full three-term expansion


def bridging_norm_gap(mb: EmpiricalKernelMean, sim: EmpiricalKernelMean) -> NormGap:
    return NormGap(2.0 * (1.0 - inner_product(mb, sim)), rkhs_distance_sq(mb, sim))


@dataclass(frozen=True)
class GramSolveConfig:
    regularizer: float = 0.0
    tolerance: float = 1e-8

    def __post_init__(self) -> None:
        if not self.regularizer >= 0:
            raise ValueError(f"regularizer must be >= 0, got {self.regularizer}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")


class RegularizedSystem:
    """Cached factorization of A = G + reg * I for repeated solves.

    Cholesky first; if A is not numerically SPD, falls back to pivoted LU.
    Either way the reciprocal condition number is estimated with LAPACK and
    a numerically singular A raises ``SingularSystemError``.
    """

    def __init__(self, G: Any, reg: float = 0.0, tolerance: float = 1e-8):
        G = np.asarray(G, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError(f"G must be square, got shape {G.shape}")
        # Gram matrices from gram() are exactly symmetric, so try the cheap equality first
        if not np.array_equal(G, G.T):
            if np.abs(G - G.T).max() > 1e-12 * max(1.0, np.abs(G).max(initial=0)):
                raise ValueError("G must be symmetric")
        self.config = GramSolveConfig(float(reg), float(tolerance))
        n = G.shape[0]
        A = G.copy()
        A[np.diag_indices(n)] += self.config.regularizer
        self._A = A
        anorm = float(np.abs(A).sum(axis=0).max())
        self.method = "cholesky"
        try:
            self._factor = sla.cho_factor(A, lower=True, check_finite=True)
            rcond, info = lapack.dpocon(self._factor[0], anorm, uplo="L")
        except np.linalg.LinAlgError:
            self.method = "lu"
            with warnings.catch_warnings():
                # singularity is reported below through the rcond check
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self._factor = sla.lu_factor(A, check_finite=True)
            rcond, info = lapack.dgecon(self._factor[0], anorm, norm="1")
        self.rcond = float(rcond)
        if info != 0 or not self.rcond > n * np.finfo(float).eps:
            raise SingularSystemError(
                f"regularized Gram matrix is numerically singular "
                f"(n={n}, reg={self.config.regularizer:g}, rcond estimate={self.rcond:.3g})"
            )

    @property
    def size(self) -> int:
        return self._A.shape[0]

    def solve(self, rhs: Any) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.size:
            raise ValueError(f"rhs has length {rhs.shape[0]}, system has size {self.size}")
        if self.method == "cholesky":
            x = sla.cho_solve(self._factor, rhs)
        else:
            x = sla.lu_solve(self._factor, rhs)
        resid = np.linalg.norm(self._A @ x - rhs)
        scale = np.linalg.norm(rhs)
        if not resid <= self.config.tolerance * max(scale, np.finfo(float).tiny):
            if scale == 0 and resid == 0:
                return x
            raise NumericalError(
                f"solve residual {resid:.3g} exceeds tolerance {self.config.tolerance:g} * |rhs| ({scale:.3g})"
            )
        return x


def solve_regularized(G: Any, reg: float, rhs: Any, tolerance: float = 1e-8) -> np.ndarray:
    """Return w with (G + reg I) w = rhs."""
    return RegularizedSystem(G, reg, tolerance).solve(rhs)
