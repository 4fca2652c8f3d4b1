"""Seeded simulation of the controlled wealth and LQ state diffusions."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import numpy.typing as npt

from drbc.const import EXPLODED_ROLLOUT_REWARD, PATH_EXPLOSION_THRESHOLD
from drbc.exceptions import (
    DrbcInternalException,
    DrbcInvalidDataException,
    DrbcNonFinitePathException,
)
from drbc.models import (
    FloatArray,
    LqModel,
    LqPolicy,
    LqTrajectory,
    MertonMarket,
    NoiseBlock,
    TimeGrid,
    WealthPath,
)

__all__ = [
    "FractionLike",
    "Drift",
    "LqBatch",
    "spawn_rng",
    "make_noise",
    "simulate_wealth",
    "simulate_wealth_batch",
    "simulate_log_prices",
    "simulate_lq",
    "simulate_lq_batch",
    "price_to_y",
]

_LOGGER = logging.getLogger(__name__)

type Drift = float | Callable[[float], float]


class FractionLike(Protocol):
    """Investment fraction as a function of time and the observation Y."""

    def __call__(self, t: float, y: FloatArray) -> FloatArray | float:
        """Return the fraction for every entry of `y`."""
        ...


def spawn_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a generator derived from a master seed and integer keys.

    Derived streams depend only on (seed, keys), so work split across any
    number of workers reproduces the serial result.
    """
    if seed < 0 or any(key < 0 for key in keys):
        raise DrbcInvalidDataException("Seeds and stream keys must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def make_noise(seed: int, grid: TimeGrid, dim: int) -> NoiseBlock:
    """Draw Brownian increments with variance dt per step."""
    if dim < 1:
        raise DrbcInvalidDataException(f"Brownian dimension must be >= 1, got {dim}")

    rng = spawn_rng(seed)
    increments = rng.standard_normal((grid.steps, dim)) * math.sqrt(grid.dt)
    return NoiseBlock(grid=grid, increments=increments, seed=seed)


def _drift_at(b: Drift, t: float) -> float:
    return float(b(t)) if callable(b) else float(b)


def _check_finite(values: FloatArray, t: float, what: str) -> None:
    if not np.all(np.isfinite(values)) or np.max(np.abs(values)) > PATH_EXPLOSION_THRESHOLD:
        raise DrbcNonFinitePathException(f"{what} left the finite range at t={t:.6g}")


def simulate_wealth_batch(
    market: MertonMarket,
    b: Drift,
    policy: FractionLike,
    increments: FloatArray,
    grid: TimeGrid,
) -> tuple[FloatArray, FloatArray]:
    """Simulate wealth for a batch of Brownian paths.

    Args:
        market (MertonMarket): The market constants.
        b (Drift): The stock drift, constant or a function of time.
        policy (FractionLike): The fraction, evaluated at (t_j, Y_{t_j}) before every step.
        increments (FloatArray): Brownian increments of shape (n, steps).
        grid (TimeGrid): The simulation grid.

    Returns:
        tuple[FloatArray, FloatArray]: Wealth and Y, both of shape (n, steps + 1).

    Raises:
        DrbcNonFinitePathException: If any wealth level leaves the finite range.
    """
    dw = np.atleast_2d(np.asarray(increments, dtype=np.float64))
    n, steps = dw.shape
    if steps != grid.steps:
        raise DrbcInvalidDataException(
            f"Increments cover {steps} steps, grid has {grid.steps}"
        )

    dt = grid.dt
    times = grid.points
    wealth = np.empty((n, steps + 1))
    y = np.zeros((n, steps + 1))
    wealth[:, 0] = market.x0

    for j in range(steps):
        t = float(times[j])
        excess = _drift_at(b, t) - market.r
        fraction = np.broadcast_to(
            np.asarray(policy(t, y[:, j]), dtype=np.float64), (n,)
        )
        wealth[:, j + 1] = wealth[:, j] * (
            1.0
            + market.r * dt
            + fraction * excess * dt
            + fraction * market.sigma * dw[:, j]
        )
        y[:, j + 1] = y[:, j] + excess / market.sigma * dt + dw[:, j]
        _check_finite(wealth[:, j + 1], float(times[j + 1]), "Wealth")

    return wealth, y


def simulate_wealth(
    market: MertonMarket, b: Drift, policy: FractionLike, noise: NoiseBlock
) -> WealthPath:
    """Simulate one Euler-Maruyama wealth path driven by `noise`."""
    if noise.dim != 1:
        raise DrbcInvalidDataException("Wealth simulation needs one Brownian dimension")

    wealth, y = simulate_wealth_batch(
        market, b, policy, noise.increments[:, 0][np.newaxis, :], noise.grid
    )
    return WealthPath(grid=noise.grid, values=wealth[0], y=y[0])


def simulate_log_prices(b: Drift, sigma: float, noise: NoiseBlock) -> FloatArray:
    """Log price path log(S_t/S_0) of a geometric Brownian motion driven by `noise`."""
    if not sigma > 0.0:
        raise DrbcInvalidDataException(f"Volatility must be positive, got {sigma}")

    grid = noise.grid
    times = grid.points
    dw = noise.increments[:, 0]
    drifts = np.array([_drift_at(b, float(t)) for t in times[:-1]])
    log_prices = np.zeros(grid.steps + 1)
    log_prices[1:] = np.cumsum((drifts - 0.5 * sigma**2) * grid.dt + sigma * dw)
    return log_prices


def price_to_y(
    log_returns: FloatArray, grid: TimeGrid, r: float, sigma: float
) -> FloatArray:
    """Recover Y_t = (log(S_t/S_0) + sigma^2 t/2 - r t)/sigma from log prices."""
    if not sigma > 0.0:
        raise DrbcInvalidDataException(f"Volatility must be positive, got {sigma}")

    log_returns = np.asarray(log_returns, dtype=np.float64)
    if log_returns.shape != (grid.steps + 1,):
        raise DrbcInvalidDataException(
            f"Expected {grid.steps + 1} log returns, got {log_returns.shape}"
        )

    t = grid.points - grid.t0
    return np.asarray(
        (log_returns + 0.5 * sigma**2 * t - r * t) / sigma, dtype=np.float64
    )


@dataclass(frozen=True, eq=False)
class LqBatch:
    """Costs of a batch of LQ rollouts.

    Attributes:
        running_cost(FloatArray): Running costs (n,).
        terminal_cost(FloatArray): Terminal costs (n,).
        exploded(FloatArray): Mask of rollouts that left the finite range.
        states(FloatArray | None): States (n, steps + 1, d) when recorded.
        controls(FloatArray | None): Controls (n, steps, k) when recorded.
    """

    running_cost: FloatArray
    terminal_cost: FloatArray
    exploded: npt.NDArray[np.bool_]
    states: FloatArray | None = None
    controls: FloatArray | None = None

    def rewards(self, exploded_reward: float = EXPLODED_ROLLOUT_REWARD) -> FloatArray:
        """Rewards -(running + terminal), `exploded_reward` for exploded rollouts."""
        rewards = -(self.running_cost + self.terminal_cost)
        return np.asarray(
            np.where(self.exploded, exploded_reward, rewards), dtype=np.float64
        )


def _quadratic(x: FloatArray, matrix: FloatArray) -> FloatArray:
    return np.asarray(np.einsum("ni,ij,nj->n", x, matrix, x), dtype=np.float64)


def simulate_lq_batch(
    model: LqModel,
    theta: FloatArray,
    policy: LqPolicy,
    increments: FloatArray,
    x0: FloatArray,
    *,
    raise_on_explode: bool = True,
    record: bool = False,
) -> LqBatch:
    """Simulate a batch of LQ rollouts.

    Args:
        model (LqModel): The model.
        theta (FloatArray): One parameter (m,) shared by all rollouts, or one per rollout (n, m).
        policy (LqPolicy): The feedback policy.
        increments (FloatArray): Brownian increments (n, steps, d).
        x0 (FloatArray): Initial states (d,) or (n, d).
        raise_on_explode (bool, optional): Raise instead of flagging exploded rollouts. Defaults to True.
        record (bool, optional): Keep states and controls. Defaults to False.

    Returns:
        LqBatch: Running and terminal costs with the explosion mask.

    Raises:
        DrbcNonFinitePathException: If a rollout explodes and `raise_on_explode` is set.
    """
    dw = np.asarray(increments, dtype=np.float64)
    grid = model.grid
    if dw.ndim != 3 or dw.shape[1:] != (grid.steps, model.d):
        raise DrbcInvalidDataException(
            f"Increments must have shape (n, {grid.steps}, {model.d}), got {dw.shape}"
        )
    if policy.steps != grid.steps or policy.gains.shape[1:] != (model.k, model.d):
        raise DrbcInvalidDataException("Policy gains do not match the model")

    n = dw.shape[0]
    dt = grid.dt
    drift = model.drift(theta)
    per_path = drift.ndim == 3
    if per_path and drift.shape[0] != n:
        raise DrbcInvalidDataException("Need one theta per rollout")

    x = np.array(np.broadcast_to(np.asarray(x0, dtype=np.float64), (n, model.d)))
    running = np.zeros(n)
    exploded = np.zeros(n, dtype=np.bool_)
    states = np.empty((n, grid.steps + 1, model.d)) if record else None
    controls = np.empty((n, grid.steps, model.k)) if record else None
    if states is not None:
        states[:, 0] = x

    for j in range(grid.steps):
        u = policy.control(j, x)
        running += (_quadratic(x, model.Q) + _quadratic(u, model.Rmat)) * dt
        ax = np.einsum("nij,nj->ni", drift, x) if per_path else x @ drift.T
        x = x + (ax + u @ model.G.T) * dt + dw[:, j] @ model.Sigma.T

        bad = ~np.all(np.isfinite(x), axis=1) | (
            np.max(np.abs(x), axis=1) > PATH_EXPLOSION_THRESHOLD
        )
        if np.any(bad):
            if raise_on_explode:
                raise DrbcNonFinitePathException(
                    f"LQ state left the finite range at t={grid.points[j + 1]:.6g}"
                )
            _LOGGER.debug("%d rollouts exploded at step %d", int(np.sum(bad & ~exploded)), j)
            exploded |= bad
            x[bad] = 0.0

        if states is not None and controls is not None:
            states[:, j + 1] = x
            controls[:, j] = u

    terminal = _quadratic(x, model.Q_T)
    return LqBatch(
        running_cost=running,
        terminal_cost=terminal,
        exploded=exploded,
        states=states,
        controls=controls,
    )


def simulate_lq(
    model: LqModel,
    theta: FloatArray,
    policy: LqPolicy,
    noise: NoiseBlock,
    x0: FloatArray,
) -> LqTrajectory:
    """Simulate one Euler LQ trajectory driven by `noise`."""
    if noise.dim != model.d or noise.grid.steps != model.grid.steps:
        raise DrbcInvalidDataException("Noise does not match the model dimensions")

    batch = simulate_lq_batch(
        model, theta, policy, noise.increments[np.newaxis], x0, record=True
    )
    if batch.states is None or batch.controls is None:
        raise DrbcInternalException("Recorded rollout is missing its states")
    return LqTrajectory(
        grid=model.grid,
        states=batch.states[0],
        controls=batch.controls[0],
        running_cost=float(batch.running_cost[0]),
        terminal_cost=float(batch.terminal_cost[0]),
    )
