"""Kernel herding from an empirical kernel mean.

Step j picks, from a finite candidate set,

    argmax_c  mu(c) - (1/j) * sum_{j' < j} k(c, theta_j')

where mu(c) = sum_i w_i k(c, atom_i). A bridged mean flattened to atoms
{theta_{l,i}} with weights {v_l * w_{l,i}} goes through exactly this path.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .kernels import EmpiricalKernelMean, as_points, gram, rkhs_distance_sq

_CHUNK = 2048


@dataclass(frozen=True)
class Grid:
    """Regular grid over a box; ``resolution`` points per dimension (>= 2)."""

    resolution: Union[int, Sequence[int]]
    lower: Sequence[float]
    upper: Sequence[float]

    def points(self) -> np.ndarray:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        res = np.broadcast_to(np.asarray(self.resolution, dtype=int), lo.shape)
        if np.any(res < 2):
            raise ValueError("grid resolution must be >= 2 per dimension")
        if not np.all(lo < hi):
            raise ValueError("grid needs lower < upper")
        axes = [np.linspace(a, b, r) for a, b, r in zip(lo, hi, res)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in mesh], axis=1)


Candidates = Union[str, Grid, np.ndarray]


@dataclass(frozen=True)
class HerdingConfig:
    n_samples: int = 100
    candidates: Candidates = "atoms"

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if isinstance(self.candidates, str) and self.candidates != "atoms":
            raise ValueError(f"unknown candidate source {self.candidates!r}")


def candidate_points(target: EmpiricalKernelMean, source: Candidates) -> np.ndarray:
    if isinstance(source, str):
        pts = target.atoms
    elif isinstance(source, Grid):
        pts = source.points()
    else:
        pts = as_points(source)
    if pts.shape[0] == 0:
        raise ValueError("empty candidate set")
    if pts.shape[1] != target.dim:
        raise ValueError(f"candidates have dimension {pts.shape[1]}, target has {target.dim}")
    return pts


def _unique_rows(points: np.ndarray):
    """Unique rows in first-occurrence order, plus the inverse map."""
    _, first, inverse = np.unique(points, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return points[first[order]], rank[inverse.reshape(-1)]


def mean_scores(points: np.ndarray, target: EmpiricalKernelMean) -> np.ndarray:
    """mu(c) for every row c of ``points``; duplicate atoms are merged first."""
    atoms, inv = _unique_rows(target.atoms)
    w = np.zeros(atoms.shape[0])
    np.add.at(w, inv, target.weights)
    out = np.empty(points.shape[0])
    for s in range(0, points.shape[0], _CHUNK):
        out[s:s + _CHUNK] = gram(points[s:s + _CHUNK], atoms, target.kernel) @ w
    return out


def herd(target: EmpiricalKernelMean, config: HerdingConfig) -> np.ndarray:
    """Greedy herded samples, shape (n_samples, d), in selection order.

    Ties go to the lowest candidate index.
    """
    cand_all = candidate_points(target, config.candidates)
    # duplicate candidates always tie, so keeping first occurrences keeps the tie-break
    cand, _ = _unique_rows(cand_all)
    first = mean_scores(cand, target)
    repulsion = np.zeros(cand.shape[0])
    picks = np.empty(config.n_samples, dtype=int)
    for j in range(1, config.n_samples + 1):
        score = first - repulsion / j if j > 1 else first
        idx = int(np.argmax(score))
        picks[j - 1] = idx
        repulsion += gram(cand, cand[idx:idx + 1], target.kernel)[:, 0]
    return cand[picks].copy()


def mmd_to_target(samples, target: EmpiricalKernelMean) -> float:
    """Squared RKHS distance between the uniform mean over samples and target."""
    samples = as_points(samples)
    if samples.shape[0] == 0:
        raise ValueError("no samples")
    return rkhs_distance_sq(EmpiricalKernelMean.uniform(samples, target.kernel), target)


def write_samples_csv(samples: np.ndarray, path) -> None:
    samples = np.asarray(samples, dtype=float)
    header = ",".join(f"theta{i + 1}" for i in range(samples.shape[1]))
    body = "\n".join(",".join(repr(float(v)) for v in row) for row in samples)
    Path(path).write_text(header + "\n" + body + "\n", newline="\n")


def read_samples_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
