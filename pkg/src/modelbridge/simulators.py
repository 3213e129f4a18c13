"""In-repo simulators, datasets and the regime-shift data generator.

Two simulators are provided:

``AssemblyLineSimulator``
    Discrete-event model of one ASSEMBLY machine feeding one INSPECTION
    machine that inspects assembled products four at a time. Parameters
    theta = (assembly mean, assembly std, inspection mean, inspection std).
``AnalyticToySimulator``
    y = theta_1 * x + theta_2 * x**2 / 100; cheap and deterministic.

RNG: numpy PCG64 (``np.random.default_rng``). ``simulate_assembly`` draws all
assembly times first, then one inspection time per batch, so seeded runs give
the same event sequence on every platform numpy supports.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np
from scipy.special import expit

from .kernel_abc import stream

BATCH_SIZE = 4

RngLike = Union[int, np.random.Generator, None]


def _rng(seed: RngLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# --- assembly line -----------------------------------------------------------


@dataclass(frozen=True)
class AssemblyParams:
    assembly_mean: float
    assembly_std: float
    inspection_mean: float
    inspection_std: float

    def __post_init__(self) -> None:
        vals = (self.assembly_mean, self.assembly_std, self.inspection_mean, self.inspection_std)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"assembly parameters must be finite, got {vals}")
        if self.assembly_std < 0 or self.inspection_std < 0:
            raise ValueError("standard deviations must be >= 0")

    @classmethod
    def from_vector(cls, theta) -> "AssemblyParams":
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != 4:
            raise ValueError(f"assembly theta must have 4 entries, got {theta.shape[0]}")
        return cls(*(float(t) for t in theta))


def product_count(x: float) -> int:
    """Round half up to the nearest integer; negative counts are rejected."""
    count = math.floor(float(x) + 0.5)
    if count < 0:
        raise ValueError(f"product count must be >= 0, got {x}")
    return count


def simulate_assembly(x: float, params: AssemblyParams, seed: RngLike = None) -> float:
    """Completion time of the last inspection when producing round(x) products.

    Infinite buffers, parts never starve. Negative service-time draws are
    clamped to zero. A final partial batch is inspected once assembly ends.
    """
    count = product_count(x)
    if count == 0:
        return 0.0
    rng = _rng(seed)
    n_batches = -(-count // BATCH_SIZE)
    assembly = np.maximum(rng.normal(params.assembly_mean, params.assembly_std, size=count), 0.0)
    inspection = np.maximum(rng.normal(params.inspection_mean, params.inspection_std, size=n_batches), 0.0)
    done = np.cumsum(assembly)
    ready = done[np.minimum(np.arange(1, n_batches + 1) * BATCH_SIZE, count) - 1]
    end = 0.0
    for b in range(n_batches):
        end = max(float(ready[b]), end) + float(inspection[b])
    return end


# --- analytic toy -------------------------------------------------------------


def analytic_toy(x, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != 2:
        raise ValueError(f"toy theta must have 2 entries, got {theta.shape[0]}")
    x = np.asarray(x, dtype=float)
    return theta[0] * x + theta[1] * x**2 / 100.0


# --- simulator objects with a call ledger --------------------------------------


class Simulator:
    """Base class: ``sim(X, theta, rng)`` maps (n, d_x) inputs to (n, d_y) outputs.

    Every input row counts as one simulator execution in ``calls``.
    """

    name = "base"
    d_x = 1
    d_y = 1
    d_theta = 1

    def __init__(self) -> None:
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def __call__(self, X, theta, rng: RngLike = None) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.d_x)
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.d_theta:
            raise ValueError(f"{self.name} expects theta of length {self.d_theta}, got {theta.shape[0]}")
        with self._lock:
            self._calls += X.shape[0]
        return self._simulate(X, theta, _rng(rng)).reshape(X.shape[0], self.d_y)

    def _simulate(self, X: np.ndarray, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class AssemblyLineSimulator(Simulator):
    name = "assembly"
    d_theta = 4

    def _simulate(self, X, theta, rng):
        params = AssemblyParams.from_vector(theta)
        return np.array([simulate_assembly(x, params, rng) for x in X[:, 0]])


class AnalyticToySimulator(Simulator):
    name = "toy"
    d_theta = 2

    def _simulate(self, X, theta, rng):
        return analytic_toy(X[:, 0], theta)


SIMULATORS = {"assembly": AssemblyLineSimulator, "toy": AnalyticToySimulator}


def make_simulator(name: str) -> Simulator:
    try:
        return SIMULATORS[name]()
    except KeyError:
        raise ValueError(f"unknown simulator {name!r}; choose from {sorted(SIMULATORS)}") from None


# --- datasets ---------------------------------------------------------------------


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        X = X.reshape(-1, 1) if X.ndim == 1 else X
        Y = Y.reshape(-1, 1) if Y.ndim == 1 else Y
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("X and Y must be 1-D or 2-D")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset entries must be finite")
        self.X, self.Y = X, Y

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_y(self) -> int:
        return self.Y.shape[1]

    def to_csv(self, path) -> None:
        """Write ``path`` (CSV) and its JSON sidecar ``path.with_suffix('.json')``."""
        path = Path(path)
        header = [f"x{i + 1}" for i in range(self.d_x)] + [f"y{i + 1}" for i in range(self.d_y)]
        lines = [",".join(header)]
        for row in np.hstack([self.X, self.Y]):
            lines.append(",".join(repr(float(v)) for v in row))
        path.write_text("\n".join(lines) + "\n", newline="\n")
        sidecar = {"d_x": self.d_x, "d_y": self.d_y, "meta": self.meta}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        d_x = sum(h.startswith("x") for h in header)
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln.strip()], dtype=float)
        rows = rows.reshape(-1, len(header))
        meta: dict = {}
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text()).get("meta", {})
        return cls(rows[:, :d_x], rows[:, d_x:], meta)


# --- regime shift ---------------------------------------------------------------------


@dataclass(frozen=True)
class RegimeShiftConfig:
    """theta(x) moves from theta0 to theta1 along a sigmoid centred at ``switch``.

    Dataset l draws its centre chi_l ~ U[chi_low, chi_high], then n inputs
    from N(chi_l, input_std).
    """

    theta0: tuple
    theta1: tuple
    switch: float
    scale: float = 5.0
    chi_low: float = 70.0
    chi_high: float = 130.0
    input_std: float = 5.0
    n: int = 50
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta0", tuple(float(t) for t in np.atleast_1d(self.theta0)))
        object.__setattr__(self, "theta1", tuple(float(t) for t in np.atleast_1d(self.theta1)))
        if len(self.theta0) != len(self.theta1):
            raise ValueError("theta0 and theta1 must have the same length")
        if not self.scale > 0:
            raise ValueError("sigmoid scale must be > 0")
        if not self.chi_low < self.chi_high:
            raise ValueError("need chi_low < chi_high")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.input_std < 0 or self.noise_std < 0:
            raise ValueError("standard deviations must be >= 0")

    def to_dict(self) -> dict:
        return {
            "theta0": list(self.theta0), "theta1": list(self.theta1), "switch": self.switch,
            "scale": self.scale, "chi_low": self.chi_low, "chi_high": self.chi_high,
            "input_std": self.input_std, "n": self.n, "noise_std": self.noise_std,
        }


# theta^(0) / theta^(1) of the simple assembly-line study, switching at x = 110
ASSEMBLY_REGIMES = RegimeShiftConfig(theta0=(2.0, 0.5, 5.0, 1.0), theta1=(3.5, 0.5, 7.0, 1.0), switch=110.0)


def theta_at(x, config: RegimeShiftConfig) -> np.ndarray:
    """True parameters at input x; shape (d_theta,) for scalar x, else (len(x), d_theta)."""
    t0 = np.asarray(config.theta0)
    t1 = np.asarray(config.theta1)
    s = expit((np.asarray(x, dtype=float) - config.switch) / config.scale)
    return t0 + (t1 - t0) * s[..., None]


def generate_dataset(l: int, config: RegimeShiftConfig, sim: Simulator, seed: int) -> Dataset:
    """Dataset l: inputs around a random centre, each output simulated at theta(x_i)."""
    rng = stream(seed, l)
    chi = float(rng.uniform(config.chi_low, config.chi_high))
    X = rng.normal(chi, config.input_std, size=config.n)
    Y = np.empty((config.n, sim.d_y))
    for i, x in enumerate(X):
        Y[i] = sim(np.array([[x]]), theta_at(x, config), stream(seed, l, i))[0]
    if config.noise_std > 0:
        Y = Y + rng.normal(0.0, config.noise_std, size=Y.shape)
    meta = {"l": int(l), "seed": int(seed), "chi": chi, "simulator": sim.name, "regime": config.to_dict()}
    return Dataset(X.reshape(-1, 1), Y, meta)
