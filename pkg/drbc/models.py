"""Models for the drbc library."""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any, Self

import numpy as np
import numpy.typing as npt
from numpy.polynomial.hermite import hermgauss

from drbc._adapters import _AtomsAdapter, _MatrixAdapter
from drbc.const import (
    DEFAULT_ASCENT_MAX_ITERS,
    DEFAULT_ASCENT_TOL,
    DEFAULT_N0,
    DEFAULT_R,
    DEFAULT_STEP0,
    DEFAULT_STEP_DECAY,
    DEFAULT_U_MAX,
    PROBABILITY_SUM_TOL,
    DivergenceKind,
    StepRule,
)
from drbc.exceptions import DrbcInvalidDataException

__all__ = [
    "FloatArray",
    "TimeGrid",
    "NoiseBlock",
    "WealthPath",
    "LqTrajectory",
    "FinitePrior",
    "GaussianPrior",
    "Prior",
    "RadiusSpec",
    "RmlmcParams",
    "AscentSchedule",
    "DualEvalResult",
    "MertonMarket",
    "QuadratureRule",
    "LqModel",
    "LqPolicy",
    "BeliefFeatures",
    "prior_from_dict",
]

FloatArray = npt.NDArray[np.float64]

_SYMMETRY_TOL = 1e-10


def _frozen_array(value: Any, name: str) -> FloatArray:
    array = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise DrbcInvalidDataException(f"{name} contains non-finite entries")
    array.flags.writeable = False
    return array


def _check_psd(matrix: FloatArray, name: str, *, definite: bool = False) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DrbcInvalidDataException(f"{name} must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(matrix), initial=0.0)))
    if not np.allclose(matrix, matrix.T, atol=_SYMMETRY_TOL * scale, rtol=0.0):
        raise DrbcInvalidDataException(f"{name} must be symmetric")
    smallest = float(np.min(np.linalg.eigvalsh(matrix), initial=np.inf))
    if definite and smallest <= 0.0:
        raise DrbcInvalidDataException(f"{name} must be positive definite")
    if smallest < -_SYMMETRY_TOL * scale:
        raise DrbcInvalidDataException(f"{name} must be positive semidefinite")


class _BaseModel(ABC):
    @classmethod
    @abstractmethod
    def _from_dict(cls: type[Self], data: Mapping[str, Any]) -> Self:
        """Convert a decoded JSON object to a model."""

    @abstractmethod
    def to_dict(self) -> dict[str, Any]:
        """Convert the model to a JSON-compatible object."""

    @classmethod
    def from_json(cls: type[Self], text: str) -> Self:
        """Convert a JSON document to a model."""
        try:
            data = json.loads(text)
        except json.JSONDecodeError as ex:
            raise DrbcInvalidDataException("Invalid JSON document") from ex

        if not isinstance(data, Mapping):
            raise DrbcInvalidDataException("JSON document must be an object")

        try:
            return cls._from_dict(data)
        except KeyError as ex:
            raise DrbcInvalidDataException(f"Missing key {ex}") from ex

    def to_json(self) -> str:
        """Convert the model to a JSON document."""
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class TimeGrid(_BaseModel):
    """Uniform time grid.

    Attributes:
        T(float): The horizon.
        steps(int): The number of steps.
        t0(float): The initial time.
    """

    T: float
    steps: int
    t0: float = 0.0

    def __post_init__(self) -> None:
        if not self.T > 0.0:
            raise DrbcInvalidDataException(f"Horizon must be positive, got {self.T}")
        if self.steps < 1:
            raise DrbcInvalidDataException(
                f"Step count must be at least 1, got {self.steps}"
            )

    @property
    def dt(self) -> float:
        """The step size."""
        return self.T / self.steps

    @property
    def points(self) -> FloatArray:
        """The grid points including both ends."""
        return self.t0 + self.dt * np.arange(self.steps + 1, dtype=np.float64)

    def refined(self, factor: int) -> TimeGrid:
        """Return the grid with every step split into `factor` steps."""
        return TimeGrid(T=self.T, steps=self.steps * factor, t0=self.t0)

    @classmethod
    def _from_dict(cls, data: Mapping[str, Any]) -> Self:
        return cls(
            T=float(data["T"]), steps=int(data["steps"]), t0=float(data.get("t0", 0.0))
        )

    def to_dict(self) -> dict[str, Any]:
        return {"T": self.T, "steps": self.steps, "t0": self.t0}


@dataclass(frozen=True, eq=False)
class NoiseBlock:
    """Brownian increments on a time grid.

    Attributes:
        grid(TimeGrid): The grid the increments belong to.
        increments(FloatArray): Read-only matrix of shape (steps, dim) with N(0, dt) entries.
        seed(int): The seed the increments were drawn with.
    """

    grid: TimeGrid
    increments: FloatArray
    seed: int

    def __post_init__(self) -> None:
        increments = _frozen_array(self.increments, "increments")
        if increments.ndim != 2 or increments.shape[0] != self.grid.steps:
            raise DrbcInvalidDataException(
                f"Increments must have shape ({self.grid.steps}, dim), got {increments.shape}"
            )
        object.__setattr__(self, "increments", increments)

    @property
    def dim(self) -> int:
        """The Brownian dimension."""
        return int(self.increments.shape[1])

    @property
    def brownian_path(self) -> FloatArray:
        """The Brownian motion at the grid points, starting at zero."""
        path = np.zeros((self.grid.steps + 1, self.dim))
        path[1:] = np.cumsum(self.increments, axis=0)
        return path


@dataclass(frozen=True, eq=False)
class WealthPath:
    """Simulated wealth path.

    Attributes:
        grid(TimeGrid): The simulation grid.
        values(FloatArray): Wealth at the grid points.
        y(FloatArray): The observation process Y at the grid points.
    """

    grid: TimeGrid
    values: FloatArray
    y: FloatArray

    @property
    def terminal(self) -> float:
        """The terminal wealth."""
        return float(self.values[-1])


@dataclass(frozen=True, eq=False)
class LqTrajectory:
    """Simulated LQ trajectory.

    Attributes:
        grid(TimeGrid): The simulation grid.
        states(FloatArray): States of shape (steps + 1, d).
        controls(FloatArray): Applied (clipped) controls of shape (steps, k).
        running_cost(float): Accumulated running cost.
        terminal_cost(float): The terminal cost.
    """

    grid: TimeGrid
    states: FloatArray
    controls: FloatArray
    running_cost: float
    terminal_cost: float

    @property
    def total_cost(self) -> float:
        """The running plus terminal cost."""
        return self.running_cost + self.terminal_cost


@dataclass(frozen=True, eq=False)
class FinitePrior(_BaseModel):
    """Prior supported on finitely many atoms.

    Atom values are scalars (shape (n,)) or vectors (shape (n, m)). Atoms with
    zero mass are accepted so that tilted distributions share the support of
    the prior they were derived from.

    Attributes:
        values(FloatArray): The atom values.
        probs(FloatArray): The atom probabilities.
    """

    values: FloatArray
    probs: FloatArray

    def __post_init__(self) -> None:
        values = _frozen_array(self.values, "atom values")
        probs = _frozen_array(self.probs, "atom probabilities")

        if values.ndim not in (1, 2) or probs.ndim != 1:
            raise DrbcInvalidDataException("Atoms must be scalars or vectors")
        if values.shape[0] != probs.shape[0] or probs.shape[0] == 0:
            raise DrbcInvalidDataException(
                "Atom values and probabilities must be non-empty and of equal length"
            )
        if np.any(probs < 0.0):
            raise DrbcInvalidDataException("Atom probabilities must be non-negative")
        if abs(float(np.sum(probs)) - 1.0) > PROBABILITY_SUM_TOL:
            raise DrbcInvalidDataException(
                f"Atom probabilities must sum to 1, got {float(np.sum(probs))!r}"
            )
        if np.unique(values, axis=0).shape[0] != values.shape[0]:
            raise DrbcInvalidDataException("Atom values must be distinct")

        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point_mass(cls, value: float | FloatArray) -> Self:
        """Create a prior with a single atom."""
        return cls(values=np.array([value], dtype=np.float64), probs=np.ones(1))

    @property
    def size(self) -> int:
        """The number of atoms."""
        return int(self.probs.shape[0])

    @property
    def mean(self) -> FloatArray:
        """The prior mean (a 0-d array for scalar atoms)."""
        return np.asarray(self.probs @ self.values, dtype=np.float64)

    @property
    def has_full_support(self) -> bool:
        """Whether every atom has positive mass."""
        return bool(np.all(self.probs > 0.0))

    def same_atoms(self, other: FinitePrior) -> bool:
        """Whether both priors are supported on the same atom values."""
        return self.values.shape == other.values.shape and bool(
            np.array_equal(self.values, other.values)
        )

    def with_probs(self, probs: FloatArray) -> FinitePrior:
        """Return a prior on the same atoms with other probabilities."""
        return FinitePrior(values=self.values, probs=probs)

    @classmethod
    def _from_dict(cls, data: Mapping[str, Any]) -> Self:
        values, probs = _AtomsAdapter.decode(data["atoms"])
        return cls(values=values, probs=probs)

    def to_dict(self) -> dict[str, Any]:
        return {"atoms": _AtomsAdapter.encode(self.values, self.probs)}


@dataclass(frozen=True)
class GaussianPrior(_BaseModel):
    """Gaussian prior, isotropic when `dim` is set.

    Attributes:
        mean(float): The mean of every coordinate.
        std(float): The standard deviation of every coordinate.
        dim(int | None): The dimension, None for a scalar prior.
    """

    mean: float
    std: float
    dim: int | None = None

    def __post_init__(self) -> None:
        if not self.std > 0.0:
            raise DrbcInvalidDataException(
                f"Prior standard deviation must be positive, got {self.std}"
            )
        if self.dim is not None and self.dim < 1:
            raise DrbcInvalidDataException(
                f"Prior dimension must be at least 1, got {self.dim}"
            )

    @classmethod
    def _from_dict(cls, data: Mapping[str, Any]) -> Self:
        dim = data.get("dim")
        return cls(
            mean=float(data["mu0"]),
            std=float(data["sigma0"]),
            dim=None if dim is None else int(dim),
        )

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"mu0": self.mean, "sigma0": self.std}
        if self.dim is not None:
            data["dim"] = self.dim
        return {"gaussian": data}


type Prior = FinitePrior | GaussianPrior


def prior_from_dict(data: Mapping[str, Any]) -> Prior:
    """Decode either prior encoding."""
    if "atoms" in data:
        return FinitePrior._from_dict(data)
    if "gaussian" in data and isinstance(data["gaussian"], Mapping):
        try:
            return GaussianPrior._from_dict(data["gaussian"])
        except KeyError as ex:
            raise DrbcInvalidDataException(f"Missing key {ex}") from ex
    raise DrbcInvalidDataException("Prior must contain 'atoms' or 'gaussian'")


@dataclass(frozen=True)
class RadiusSpec:
    """Radius and divergence of the prior ambiguity set.

    Attributes:
        delta(float): The radius.
        divergence(DivergenceKind): The divergence.
        k(float): The Cressie-Read exponent.
    """

    delta: float
    divergence: DivergenceKind = DivergenceKind.KL
    k: float = 2.0

    def __post_init__(self) -> None:
        if not self.delta >= 0.0:
            raise DrbcInvalidDataException(f"Radius must be >= 0, got {self.delta}")
        if self.divergence is DivergenceKind.CRESSIE_READ and not self.k > 1.0:
            raise DrbcInvalidDataException(
                f"Cressie-Read exponent must exceed 1, got {self.k}"
            )


@dataclass(frozen=True)
class RmlmcParams:
    """Parameters of the randomized level law.

    Attributes:
        R(float): The geometric ratio, strictly inside (1/2, 3/4).
        n0(int): The base level.
    """

    R: float = DEFAULT_R
    n0: int = DEFAULT_N0

    def __post_init__(self) -> None:
        if not 0.5 < self.R < 0.75:
            raise DrbcInvalidDataException(
                f"Geometric ratio R must lie in (1/2, 3/4), got {self.R}"
            )
        if self.n0 < 0:
            raise DrbcInvalidDataException(f"Base level must be >= 0, got {self.n0}")

    def level_pmf(self, level: int) -> float:
        """Probability of drawing `level`."""
        if level < self.n0:
            return 0.0
        return self.R * (1.0 - self.R) ** (level - self.n0)


@dataclass(frozen=True)
class AscentSchedule:
    """Settings of the dual ascent on the multiplier.

    Attributes:
        lambda0(float | None): The initial multiplier, None for the midpoint of the admissible interval.
        rule(StepRule): The step rule.
        step0(float): Initial step of the diminishing rule.
        decay(float): Decay constant of the diminishing rule.
        max_iters(int): The iteration limit.
        tol(float): The tolerance on successive iterates.
        fixed_batch(bool): Whether one outer batch is reused across iterations.
    """

    lambda0: float | None = None
    rule: StepRule = StepRule.DIMINISHING
    step0: float = DEFAULT_STEP0
    decay: float = DEFAULT_STEP_DECAY
    max_iters: int = DEFAULT_ASCENT_MAX_ITERS
    tol: float = DEFAULT_ASCENT_TOL
    fixed_batch: bool = False

    def __post_init__(self) -> None:
        if self.lambda0 is not None and not self.lambda0 > 0.0:
            raise DrbcInvalidDataException(
                f"Initial multiplier must be positive, got {self.lambda0}"
            )
        if not self.step0 > 0.0 or not self.decay > 0.0:
            raise DrbcInvalidDataException("Step size and decay must be positive")
        if self.max_iters < 1 or not self.tol > 0.0:
            raise DrbcInvalidDataException(
                "Iteration limit and tolerance must be positive"
            )

    def step(self, iteration: int) -> float:
        """The diminishing step at `iteration`."""
        return self.step0 / (1.0 + iteration / self.decay)


@dataclass(frozen=True)
class DualEvalResult(_BaseModel):
    """Result of a robust policy evaluation.

    Attributes:
        robust_value(float): The estimated worst-case value.
        lambda_star(float): The optimizing multiplier.
        std_err(float): The delta-method standard error.
        n_outer(int): The number of outer draws behind the final estimate.
        iterations(int): The number of ascent iterations.
        m_hat(float): The estimate of the exponential transform at lambda_star, relative to the batch shift.
        lambda_upper_bound(float): The upper end of the admissible multiplier interval.
        converged(bool): Whether the ascent met its tolerance.
    """

    robust_value: float
    lambda_star: float
    std_err: float
    n_outer: int
    iterations: int
    m_hat: float
    lambda_upper_bound: float
    converged: bool = True

    @classmethod
    def _from_dict(cls, data: Mapping[str, Any]) -> Self:
        return cls(
            robust_value=float(data["robust_value"]),
            lambda_star=float(data["lambda_star"]),
            std_err=float(data["std_err"]),
            n_outer=int(data["n_outer"]),
            iterations=int(data["iterations"]),
            m_hat=float(data.get("m_hat", math.nan)),
            lambda_upper_bound=float(data.get("lambda_upper_bound", math.inf)),
            converged=bool(data.get("converged", True)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "robust_value": self.robust_value,
            "lambda_star": self.lambda_star,
            "std_err": self.std_err,
            "n_outer": self.n_outer,
            "iterations": self.iterations,
            "m_hat": self.m_hat,
            "lambda_upper_bound": self.lambda_upper_bound,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class MertonMarket(_BaseModel):
    """Market constants of the Merton problem.

    Attributes:
        r(float): The risk-free rate.
        sigma(float): The volatility.
        T(float): The horizon.
        x0(float): The initial wealth.
        alpha(float): The power-utility exponent.
    """

    r: float
    sigma: float
    T: float = 1.0
    x0: float = 1.0
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not self.sigma > 0.0:
            raise DrbcInvalidDataException(
                f"Volatility must be positive, got {self.sigma}"
            )
        if not self.x0 > 0.0:
            raise DrbcInvalidDataException(
                f"Initial wealth must be positive, got {self.x0}"
            )
        if not self.T > 0.0:
            raise DrbcInvalidDataException(f"Horizon must be positive, got {self.T}")
        if not 0.0 < self.alpha < 1.0:
            raise DrbcInvalidDataException(
                f"Utility exponent alpha must lie in (0, 1), got {self.alpha}"
            )

    def utility(self, wealth: FloatArray | float) -> FloatArray:
        """Power utility x^alpha/alpha, zero for non-positive wealth."""
        x = np.maximum(np.asarray(wealth, dtype=np.float64), 0.0)
        return np.asarray(x**self.alpha / self.alpha, dtype=np.float64)

    @classmethod
    def _from_dict(cls, data: Mapping[str, Any]) -> Self:
        return cls(
            r=float(data["r"]),
            sigma=float(data["sigma"]),
            T=float(data.get("T", 1.0)),
            x0=float(data.get("x0", 1.0)),
            alpha=float(data.get("alpha", 0.5)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "r": self.r,
            "sigma": self.sigma,
            "T": self.T,
            "x0": self.x0,
            "alpha": self.alpha,
        }


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Quadrature for expectations of a standard normal variable.

    Attributes:
        nodes(FloatArray): Nodes for N(0, 1).
        weights(FloatArray): Positive weights summing to one.
    """

    nodes: FloatArray
    weights: FloatArray

    def __post_init__(self) -> None:
        nodes = _frozen_array(self.nodes, "quadrature nodes")
        weights = _frozen_array(self.weights, "quadrature weights")
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise DrbcInvalidDataException("Nodes and weights must be matching vectors")
        if np.any(weights <= 0.0) or abs(float(np.sum(weights)) - 1.0) > 1e-10:
            raise DrbcInvalidDataException(
                "Quadrature weights must be positive and sum to 1"
            )
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def gauss_hermite(cls, n_gh: int) -> Self:
        """Create the Gauss-Hermite rule with `n_gh` nodes."""
        if n_gh < 1:
            raise DrbcInvalidDataException(f"Node count must be >= 1, got {n_gh}")
        nodes, weights = hermgauss(n_gh)
        weights = weights / np.sqrt(np.pi)
        return cls(nodes=np.sqrt(2.0) * nodes, weights=weights / np.sum(weights))

    def scaled_nodes(self, variance: float) -> FloatArray:
        """Nodes for N(0, variance)."""
        return np.asarray(np.sqrt(max(variance, 0.0)) * self.nodes, dtype=np.float64)

    def expect(
        self, func: Callable[[FloatArray], FloatArray], variance: float
    ) -> float:
        """Integrate `func` against the N(0, variance) density."""
        return float(np.dot(self.weights, func(self.scaled_nodes(variance))))


@dataclass(frozen=True, eq=False)
class LqModel(_BaseModel):
    """Linear-quadratic model with drift A(theta) = A0 + sum theta_i A_i.

    Attributes:
        A0(FloatArray): The known drift part (d, d).
        A_list(FloatArray): The drift directions (m, d, d).
        G(FloatArray): The control matrix (d, k).
        Sigma(FloatArray): The diffusion matrix (d, d).
        Q(FloatArray): The running state cost (d, d).
        Q_T(FloatArray): The terminal state cost (d, d).
        Rmat(FloatArray): The control cost (k, k).
        grid(TimeGrid): The time grid.
        u_max(float): The elementwise control bound.
    """

    A0: FloatArray
    A_list: FloatArray
    G: FloatArray
    Sigma: FloatArray
    Q: FloatArray
    Q_T: FloatArray
    Rmat: FloatArray
    grid: TimeGrid
    u_max: float = DEFAULT_U_MAX

    def __post_init__(self) -> None:
        A0 = _frozen_array(self.A0, "A0")
        if A0.ndim != 2 or A0.shape[0] != A0.shape[1]:
            raise DrbcInvalidDataException("A0 must be a square matrix")
        d = A0.shape[0]

        A_list = np.array(self.A_list, dtype=np.float64)
        if A_list.size == 0:
            A_list = np.zeros((0, d, d))
        A_list = _frozen_array(A_list, "A_list")
        G = _frozen_array(self.G, "G")
        Sigma = _frozen_array(self.Sigma, "Sigma")
        Q = _frozen_array(self.Q, "Q")
        Q_T = _frozen_array(self.Q_T, "Q_T")
        Rmat = _frozen_array(self.Rmat, "Rmat")

        if A_list.ndim != 3 or A_list.shape[1:] != (d, d):
            raise DrbcInvalidDataException(f"A_list must have shape (m, {d}, {d})")
        if G.ndim != 2 or G.shape[0] != d:
            raise DrbcInvalidDataException(f"G must have shape ({d}, k)")
        if Sigma.shape != (d, d) or Q.shape != (d, d) or Q_T.shape != (d, d):
            raise DrbcInvalidDataException(f"Sigma, Q and Q_T must be {d}x{d}")
        if Rmat.shape != (G.shape[1], G.shape[1]):
            raise DrbcInvalidDataException(f"Rmat must be {G.shape[1]}x{G.shape[1]}")
        if not self.u_max > 0.0:
            raise DrbcInvalidDataException("u_max must be positive")

        _check_psd(Q, "Q")
        _check_psd(Q_T, "Q_T")
        _check_psd(Rmat, "Rmat", definite=True)

        for name, value in (
            ("A0", A0),
            ("A_list", A_list),
            ("G", G),
            ("Sigma", Sigma),
            ("Q", Q),
            ("Q_T", Q_T),
            ("Rmat", Rmat),
        ):
            object.__setattr__(self, name, value)

    @property
    def d(self) -> int:
        """The state dimension."""
        return int(self.A0.shape[0])

    @property
    def k(self) -> int:
        """The control dimension."""
        return int(self.G.shape[1])

    @property
    def m(self) -> int:
        """The number of unknown drift directions."""
        return int(self.A_list.shape[0])

    def drift(self, theta: FloatArray) -> FloatArray:
        """A(theta) for a single theta (m,) or a batch of shape (n, m)."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape[-1:] != (self.m,):
            raise DrbcInvalidDataException(
                f"theta must have trailing dimension {self.m}, got {theta.shape}"
            )
        return np.asarray(
            self.A0 + np.tensordot(theta, self.A_list, axes=([-1], [0])),
            dtype=np.float64,
        )

    @classmethod
    def _from_dict(cls, data: Mapping[str, Any]) -> Self:
        A0 = _MatrixAdapter.decode(data["A0"], 2, "A0")
        d = A0.shape[0]
        raw_list = data.get("A_list", [])
        A_list = (
            _MatrixAdapter.decode(raw_list, 3, "A_list") if raw_list else np.zeros((0, d, d))
        )
        return cls(
            A0=A0,
            A_list=A_list,
            G=_MatrixAdapter.decode(data["G"], 2, "G"),
            Sigma=_MatrixAdapter.decode(data["Sigma"], 2, "Sigma"),
            Q=_MatrixAdapter.decode(data["Q"], 2, "Q"),
            Q_T=_MatrixAdapter.decode(data["Q_T"], 2, "Q_T"),
            Rmat=_MatrixAdapter.decode(data["Rmat"], 2, "Rmat"),
            grid=TimeGrid._from_dict(data["grid"]),
            u_max=float(data.get("u_max", DEFAULT_U_MAX)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "A0": _MatrixAdapter.encode(self.A0),
            "A_list": _MatrixAdapter.encode(self.A_list),
            "G": _MatrixAdapter.encode(self.G),
            "Sigma": _MatrixAdapter.encode(self.Sigma),
            "Q": _MatrixAdapter.encode(self.Q),
            "Q_T": _MatrixAdapter.encode(self.Q_T),
            "Rmat": _MatrixAdapter.encode(self.Rmat),
            "grid": self.grid.to_dict(),
            "u_max": self.u_max,
        }


@dataclass(frozen=True, eq=False)
class LqPolicy(_BaseModel):
    """Time-varying linear feedback u = -K(t_j) x, clipped elementwise.

    Attributes:
        gains(FloatArray): Gains of shape (steps, k, d).
        u_max(float): The elementwise control bound.
    """

    gains: FloatArray
    u_max: float = DEFAULT_U_MAX

    def __post_init__(self) -> None:
        gains = _frozen_array(self.gains, "gains")
        if gains.ndim != 3 or gains.shape[0] < 1:
            raise DrbcInvalidDataException("Gains must have shape (steps, k, d)")
        if not self.u_max > 0.0:
            raise DrbcInvalidDataException("u_max must be positive")
        object.__setattr__(self, "gains", gains)

    @property
    def steps(self) -> int:
        """The number of grid steps covered."""
        return int(self.gains.shape[0])

    def control(self, step: int, states: FloatArray) -> FloatArray:
        """Controls for states of shape (n, d) at grid step `step`."""
        raw = -states @ self.gains[step].T
        return np.asarray(np.clip(raw, -self.u_max, self.u_max), dtype=np.float64)

    @classmethod
    def _from_dict(cls, data: Mapping[str, Any]) -> Self:
        return cls(
            gains=_MatrixAdapter.decode(data["gains"], 3, "gains"),
            u_max=float(data.get("u_max", DEFAULT_U_MAX)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {"gains": _MatrixAdapter.encode(self.gains), "u_max": self.u_max}


@dataclass(frozen=True, eq=False)
class BeliefFeatures:
    """Least-squares belief about theta.

    Attributes:
        theta_hat(FloatArray): The estimate (m,).
        S_prec(FloatArray): The information matrix (m, m).
    """

    theta_hat: FloatArray
    S_prec: FloatArray = field(repr=False)

    def __post_init__(self) -> None:
        theta_hat = _frozen_array(self.theta_hat, "theta_hat")
        S_prec = _frozen_array(self.S_prec, "S_prec")
        m = theta_hat.shape[0]
        if theta_hat.ndim != 1 or S_prec.shape != (m, m):
            raise DrbcInvalidDataException("Belief shapes are inconsistent")
        if m:
            _check_psd(S_prec, "S_prec")
        object.__setattr__(self, "theta_hat", theta_hat)
        object.__setattr__(self, "S_prec", S_prec)

    def shrunk(self, prior_mean: FloatArray, prior_precision: float) -> FloatArray:
        """Posterior mean (S + tau I)^-1 (S theta_hat + tau mean) under an isotropic prior."""
        if not prior_precision >= 0.0:
            raise DrbcInvalidDataException("Prior precision must be >= 0")
        m = self.theta_hat.shape[0]
        if m == 0:
            return np.zeros(0)
        normal = self.S_prec + prior_precision * np.eye(m)
        rhs = self.S_prec @ self.theta_hat + prior_precision * np.asarray(prior_mean)
        return np.asarray(np.linalg.lstsq(normal, rhs, rcond=None)[0], dtype=np.float64)
