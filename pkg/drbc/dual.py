"""Strong-duality robust policy evaluation.

The worst-case value of a policy over priors in a KL ball is computed through
its one-dimensional dual

    sup_{lam > 0} -lam delta - lam log E[exp(-Z(B)/lam)],

where the exponential transform of the conditional value Z(B) is estimated
without bias by randomized multilevel Monte Carlo. Cressie-Read balls are
handled by their (beta) dual on weighted samples.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Self

import numpy as np
import numpy.typing as npt
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from drbc.const import LAMBDA_FLOOR_SCALE, StepRule
from drbc.exceptions import (
    DrbcEmptyBracketException,
    DrbcInvalidDataException,
    DrbcNoConvergenceException,
    DrbcNonFinitePathException,
    DrbcNonPositiveMException,
)
from drbc.models import (
    AscentSchedule,
    DualEvalResult,
    FinitePrior,
    FloatArray,
    Prior,
    RmlmcParams,
)
from drbc.priors import draw_prior
from drbc.sde import spawn_rng

__all__ = [
    "InnerSimulator",
    "ExactInnerSimulator",
    "RmlmcBatch",
    "kl_dual_objective",
    "kl_dual_exact",
    "lambda_upper_bound",
    "exp_transform",
    "exp_transform_derivative",
    "rmlmc_single",
    "draw_rmlmc_batch",
    "rmlmc_estimate_M",
    "rmlmc_derivative",
    "plugin_value",
    "evaluate_policy_kl",
    "cressie_read_dual",
]

_LOGGER = logging.getLogger(__name__)

_PRIOR_STREAM = 0
_INNER_STREAM = 1
_RETRY_STREAM_OFFSET = 1 << 20


class InnerSimulator(Protocol):
    """Unbiased sampler of the conditional value Z(b) of a fixed policy."""

    @property
    def lower_bound(self) -> float | None:
        """A lower bound on every sample, None if unknown."""
        ...

    def sample(
        self, b: FloatArray | float, count: int, rng: np.random.Generator
    ) -> FloatArray:
        """Return `count` i.i.d. samples with mean Z(b)."""
        ...


@dataclass(frozen=True)
class ExactInnerSimulator:
    """Inner sampler that returns the conditional value itself."""

    value: Callable[[FloatArray | float], float]
    lower_bound: float | None = None

    @classmethod
    def from_atoms(cls, prior: FinitePrior, scores: FloatArray) -> Self:
        """Look the value up among the atoms of a finite prior."""
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (prior.size,):
            raise DrbcInvalidDataException("Need one score per atom")
        values = prior.values

        def lookup(b: FloatArray | float) -> float:
            hits = values == np.asarray(b)
            if values.ndim > 1:
                hits = np.all(hits, axis=1)
            index = np.flatnonzero(hits)
            if index.size != 1:
                raise DrbcInvalidDataException(f"{b!r} is not an atom of the prior")
            return float(scores[index[0]])

        return cls(value=lookup, lower_bound=float(scores.min()))

    def sample(
        self, b: FloatArray | float, count: int, rng: np.random.Generator
    ) -> FloatArray:
        """Return `count` copies of Z(b)."""
        return np.full(count, self.value(b), dtype=np.float64)


def exp_transform(z: FloatArray, lam: float) -> FloatArray:
    """The transform exp(-z/lam)."""
    return np.asarray(np.exp(-np.asarray(z) / lam), dtype=np.float64)


def exp_transform_derivative(z: FloatArray, lam: float) -> FloatArray:
    """The lam-derivative (z/lam^2) exp(-z/lam) of the transform."""
    z = np.asarray(z, dtype=np.float64)
    return np.asarray(z / lam**2 * np.exp(-z / lam), dtype=np.float64)


@dataclass(frozen=True, eq=False)
class RmlmcBatch:
    """Level statistics of independent randomized multilevel draws.

    The estimator only touches the inner samples through four means, so a
    batch can be re-evaluated at any multiplier without re-simulation.

    Attributes:
        base(FloatArray): Means of the first 2^n0 inner samples.
        full(FloatArray): Means of all 2^(N+1) inner samples.
        odd(FloatArray): Means of the odd-indexed half.
        even(FloatArray): Means of the even-indexed half.
        inv_pmf(FloatArray): 1/p(N) per draw.
        levels(npt.NDArray[np.int64]): The drawn levels N.
    """

    base: FloatArray
    full: FloatArray
    odd: FloatArray
    even: FloatArray
    inv_pmf: FloatArray
    levels: npt.NDArray[np.int64]

    @property
    def n(self) -> int:
        """The number of draws."""
        return int(self.base.shape[0])

    @property
    def shift(self) -> float:
        """The smallest mean in the batch, used to stabilize the transform."""
        return float(
            min(self.base.min(), self.full.min(), self.odd.min(), self.even.min())
        )

    def _apply(
        self, func: Callable[[FloatArray, float], FloatArray], lam: float, shift: float
    ) -> FloatArray:
        correction = func(self.full - shift, lam) - 0.5 * (
            func(self.odd - shift, lam) + func(self.even - shift, lam)
        )
        return np.asarray(
            func(self.base - shift, lam) + correction * self.inv_pmf, dtype=np.float64
        )

    def transform(self, lam: float, shift: float = 0.0) -> FloatArray:
        """Single-draw estimates of E[exp(-(Z - shift)/lam)]."""
        return self._apply(exp_transform, lam, shift)

    def derivative(self, lam: float, shift: float = 0.0) -> FloatArray:
        """Single-draw estimates of the lam-derivative of the shifted transform."""
        return self._apply(exp_transform_derivative, lam, shift)


def _draw_levels(
    sim: InnerSimulator,
    b: FloatArray | float,
    params: RmlmcParams,
    rng: np.random.Generator,
) -> tuple[float, float, float, float, float, int]:
    level = params.n0 + int(rng.geometric(params.R)) - 1
    count = 2 ** (level + 1)
    samples = np.asarray(sim.sample(b, count, rng), dtype=np.float64)

    if samples.shape != (count,):
        raise DrbcInvalidDataException(
            f"Inner simulator returned shape {samples.shape}, expected ({count},)"
        )
    if not np.all(np.isfinite(samples)):
        raise DrbcNonFinitePathException("Inner simulator returned non-finite samples")
    if sim.lower_bound is not None and float(samples.min()) < sim.lower_bound:
        raise DrbcInvalidDataException(
            f"Inner sample {float(samples.min())} is below the declared bound {sim.lower_bound}"
        )

    return (
        float(samples[: 2**params.n0].mean()),
        float(samples.mean()),
        float(samples[0::2].mean()),
        float(samples[1::2].mean()),
        1.0 / params.level_pmf(level),
        level,
    )


def _stack(draws: list[tuple[float, float, float, float, float, int]]) -> RmlmcBatch:
    columns = list(zip(*draws, strict=True))
    return RmlmcBatch(
        base=np.array(columns[0]),
        full=np.array(columns[1]),
        odd=np.array(columns[2]),
        even=np.array(columns[3]),
        inv_pmf=np.array(columns[4]),
        levels=np.array(columns[5], dtype=np.int64),
    )


def _check_lambda(lam: float) -> None:
    if not lam > 0.0:
        raise DrbcInvalidDataException(f"Multiplier must be positive, got {lam}")


def rmlmc_single(
    sim: InnerSimulator,
    b: FloatArray | float,
    lam: float,
    params: RmlmcParams,
    seed: int,
    *,
    shift: float = 0.0,
) -> float:
    """One unbiased draw of exp(-(Z(b) - shift)/lam) for a fixed `b`."""
    _check_lambda(lam)
    batch = _stack([_draw_levels(sim, b, params, spawn_rng(seed))])
    return float(batch.transform(lam, shift)[0])


def draw_rmlmc_batch(
    sim: InnerSimulator,
    prior: Prior,
    params: RmlmcParams,
    n_outer: int,
    seed: int,
    *,
    stream: int = 0,
    workers: int = 1,
) -> RmlmcBatch:
    """Draw `n_outer` outer parameters and their multilevel statistics.

    Every outer index owns a generator derived from (seed, stream, index), so
    the batch does not depend on `workers`.
    """
    if n_outer < 1:
        raise DrbcInvalidDataException(f"Outer sample size must be >= 1, got {n_outer}")

    outer = draw_prior(prior, spawn_rng(seed, stream, _PRIOR_STREAM), n_outer)

    def draw(index: int) -> tuple[float, float, float, float, float, int]:
        return _draw_levels(
            sim, outer[index], params, spawn_rng(seed, stream, _INNER_STREAM, index)
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            draws = list(executor.map(draw, range(n_outer)))
    else:
        draws = [draw(index) for index in range(n_outer)]

    return _stack(draws)


def rmlmc_estimate_M(
    sim: InnerSimulator,
    prior: Prior,
    lam: float,
    params: RmlmcParams,
    n_outer: int,
    seed: int,
    *,
    shift: float = 0.0,
    workers: int = 1,
) -> tuple[float, float]:
    """Sample mean and variance of `n_outer` multilevel draws of the transform."""
    _check_lambda(lam)
    if n_outer < 2:
        raise DrbcInvalidDataException(f"Outer sample size must be >= 2, got {n_outer}")

    draws = draw_rmlmc_batch(sim, prior, params, n_outer, seed, workers=workers)
    values = draws.transform(lam, shift)
    return float(values.mean()), float(values.var(ddof=1))


def rmlmc_derivative(
    sim: InnerSimulator,
    prior: Prior,
    lam: float,
    params: RmlmcParams,
    n_outer: int,
    seed: int,
    *,
    shift: float = 0.0,
    workers: int = 1,
) -> float:
    """Multilevel estimate of the lam-derivative of the transform.

    Uses the same draws as `rmlmc_estimate_M` for equal arguments.
    """
    _check_lambda(lam)
    if n_outer < 2:
        raise DrbcInvalidDataException(f"Outer sample size must be >= 2, got {n_outer}")

    draws = draw_rmlmc_batch(sim, prior, params, n_outer, seed, workers=workers)
    return float(draws.derivative(lam, shift).mean())


def kl_dual_objective(m_value: float, lam: float, delta: float) -> float:
    """The KL dual objective -lam delta - lam log(m_value)."""
    if not m_value > 0.0:
        raise DrbcNonPositiveMException(
            f"Transform estimate {m_value!r} is not positive, enlarge the outer sample"
        )
    _check_lambda(lam)
    return -lam * delta - lam * math.log(m_value)


def lambda_upper_bound(mean_z: float, ess_inf: float, delta: float) -> float:
    """Upper bound (mean - ess inf)/delta on any maximizing multiplier."""
    if not delta > 0.0:
        raise DrbcInvalidDataException(f"Radius must be positive, got {delta}")
    if mean_z < ess_inf:
        raise DrbcInvalidDataException(
            f"Mean {mean_z} is below the essential infimum {ess_inf}"
        )
    return (mean_z - ess_inf) / delta


def kl_dual_exact(
    prior: FinitePrior, scores: FloatArray, delta: float
) -> tuple[float, float]:
    """Maximize the KL dual with the exact transform of a finite prior.

    Returns:
        tuple[float, float]: The dual value and the maximizing multiplier.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (prior.size,):
        raise DrbcInvalidDataException("Need one score per atom")
    if not delta >= 0.0:
        raise DrbcInvalidDataException(f"Radius must be >= 0, got {delta}")

    charged = prior.probs > 0.0
    log_p = np.log(prior.probs[charged])
    z = scores[charged]
    mean = float(prior.probs @ scores)
    ess_inf = float(z.min())

    if delta == 0.0:
        return mean, math.inf
    if mean - ess_inf <= 0.0:
        return ess_inf, 0.0

    def dual(lam: float) -> float:
        return ess_inf - lam * delta - lam * float(logsumexp(log_p - (z - ess_inf) / lam))

    floor = 1e-9 * max(1.0, abs(mean))
    upper = max(lambda_upper_bound(mean, ess_inf, delta), 2.0 * floor)
    result = minimize_scalar(
        lambda lam: -dual(lam),
        bounds=(floor, upper),
        method="bounded",
        options={"xatol": 1e-12 * max(1.0, upper)},
    )
    candidates = (float(result.x), floor, upper)
    lam_star = max(candidates, key=dual)
    return dual(lam_star), lam_star


def plugin_value(
    batch: RmlmcBatch, lam: float, delta: float
) -> tuple[float, float, float]:
    """Plug-in dual value at a fixed multiplier.

    Returns:
        tuple[float, float, float]: The value, its delta-method standard error and
            the shifted transform estimate.
    """
    _check_lambda(lam)
    shift = batch.shift
    values = batch.transform(lam, shift)
    m_hat = float(values.mean())
    var_hat = float(values.var(ddof=1)) if batch.n > 1 else 0.0

    value = shift + kl_dual_objective(m_hat, lam, delta)
    std_err = lam * math.sqrt(var_hat / batch.n) / m_hat
    return value, std_err, m_hat


def _ascent_direction(
    batch: RmlmcBatch, lam: float, delta: float
) -> tuple[float, float]:
    shift = batch.shift
    m_hat = float(batch.transform(lam, shift).mean())
    if not m_hat > 0.0:
        raise DrbcNonPositiveMException(
            f"Transform estimate {m_hat!r} is not positive at lambda={lam:.6g}"
        )
    dm_hat = float(batch.derivative(lam, shift).mean())
    value = shift + kl_dual_objective(m_hat, lam, delta)
    return -delta - math.log(m_hat) - lam * dm_hat / m_hat, value


def evaluate_policy_kl(
    sim: InnerSimulator,
    prior: Prior,
    delta: float,
    params: RmlmcParams,
    n_outer: int,
    ascent: AscentSchedule | None = None,
    seed: int = 0,
    *,
    workers: int = 1,
    strict: bool = False,
) -> DualEvalResult:
    """Evaluate the worst-case value of a policy over a KL ball of priors.

    The multiplier is driven by the stochastic ascent direction
    -delta - log m - lam m'/m and projected onto [floor, bound] after every
    step, where the bound (mean - ess inf)/delta is estimated from the first
    batch. The value is the plug-in dual at the final multiplier on a batch
    not used by the ascent (unless `ascent.fixed_batch` is set). Without
    convergence the evaluated multiplier with the largest batch dual value is kept.

    Args:
        sim (InnerSimulator): Sampler of the policy's conditional value.
        prior (Prior): The baseline prior.
        delta (float): The KL radius.
        params (RmlmcParams): The level law.
        n_outer (int): Outer draws per batch.
        ascent (AscentSchedule | None, optional): Ascent settings. Defaults to AscentSchedule().
        seed (int, optional): The master seed. Defaults to 0.
        workers (int, optional): Threads for outer draws. Defaults to 1.
        strict (bool, optional): Raise when the ascent does not converge. Defaults to False.

    Returns:
        DualEvalResult: The robust value with its multiplier and standard error.

    Raises:
        DrbcNonPositiveMException: If the transform estimate stays non-positive after enlarging the batch.
        DrbcNoConvergenceException: If `strict` is set and the iteration limit is reached.
    """
    if not delta > 0.0:
        raise DrbcInvalidDataException(f"Radius must be positive, got {delta}")
    if n_outer < 2:
        raise DrbcInvalidDataException(f"Outer sample size must be >= 2, got {n_outer}")
    ascent = ascent or AscentSchedule()

    def draw(stream: int, size: int = n_outer) -> RmlmcBatch:
        return draw_rmlmc_batch(
            sim, prior, params, size, seed, stream=stream, workers=workers
        )

    batch = draw(0)
    mean_z = float(batch.full.mean())
    ess_inf = float(min(batch.full.min(), batch.base.min()))
    floor = LAMBDA_FLOOR_SCALE * max(1.0, abs(mean_z))

    if mean_z - ess_inf <= 1e-12 * max(1.0, abs(mean_z)):
        _LOGGER.debug("Conditional values are constant, the adversary is powerless")
        return DualEvalResult(
            robust_value=mean_z,
            lambda_star=floor,
            std_err=float(batch.full.std(ddof=1)) / math.sqrt(batch.n),
            n_outer=batch.n,
            iterations=0,
            m_hat=1.0,
            lambda_upper_bound=floor,
        )

    upper = max(lambda_upper_bound(mean_z, ess_inf, delta), floor)
    lam = float(np.clip(ascent.lambda0 or 0.5 * (floor + upper), floor, upper))
    step = 0.25 * (upper - floor)
    previous_sign = 0.0
    converged = False
    iterations = 0
    best_value, best_lam = -math.inf, lam

    for iteration in range(ascent.max_iters):
        if iteration > 0 and not ascent.fixed_batch:
            batch = draw(iteration)
        try:
            direction, value = _ascent_direction(batch, lam, delta)
        except DrbcNonPositiveMException:
            _LOGGER.warning(
                "Non-positive transform estimate at iteration %d, doubling the batch",
                iteration,
            )
            batch = draw(_RETRY_STREAM_OFFSET + iteration, 2 * n_outer)
            direction, value = _ascent_direction(batch, lam, delta)
        if value > best_value:
            best_value, best_lam = value, lam

        match ascent.rule:
            case StepRule.DIMINISHING:
                candidate = lam + ascent.step(iteration) * direction
            case StepRule.SIGN_ADAPTIVE:
                sign = float(np.sign(direction))
                if previous_sign and sign != previous_sign:
                    step *= 0.5
                elif previous_sign:
                    step = min(1.2 * step, upper - floor)
                previous_sign = sign
                candidate = lam + sign * step

        candidate = float(np.clip(candidate, floor, upper))
        iterations = iteration + 1
        _LOGGER.debug(
            "iteration %d: lambda=%.6g direction=%.3e", iteration, candidate, direction
        )
        if abs(candidate - lam) < ascent.tol:
            lam = candidate
            converged = True
            break
        lam = candidate

    if not converged:
        if strict:
            raise DrbcNoConvergenceException(
                f"Dual ascent did not converge in {ascent.max_iters} iterations"
            )
        lam = best_lam
        _LOGGER.warning(
            "Dual ascent stopped after %d iterations, keeping the best iterate lambda=%.6g",
            iterations,
            lam,
        )

    final = batch if ascent.fixed_batch else draw(ascent.max_iters + 1)
    value, std_err, m_hat = plugin_value(final, lam, delta)
    return DualEvalResult(
        robust_value=value,
        lambda_star=lam,
        std_err=std_err,
        n_outer=final.n,
        iterations=iterations,
        m_hat=m_hat,
        lambda_upper_bound=upper,
        converged=converged,
    )


def cressie_read_dual(
    samples_z: FloatArray,
    weights: FloatArray,
    k: float,
    delta: float,
    bracket: tuple[float, float] | None = None,
) -> tuple[float, float]:
    """Maximize the Cressie-Read dual over beta.

    The objective beta - c_k(delta) ||(beta - Z)_+||_{k*} is concave; it is
    maximized by bounded scalar search. The default bracket extends past max Z
    because the maximizer exceeds max Z for small radii.

    Returns:
        tuple[float, float]: The dual value and the maximizing beta (infinite for delta = 0).

    Raises:
        DrbcEmptyBracketException: If the bracket is empty or not finite.
    """
    z = np.asarray(samples_z, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if z.shape != w.shape or z.ndim != 1 or z.size == 0:
        raise DrbcInvalidDataException("Samples and weights must be matching vectors")
    if np.any(w < 0.0) or not float(w.sum()) > 0.0:
        raise DrbcInvalidDataException("Weights must be non-negative with positive sum")
    if not k > 1.0:
        raise DrbcInvalidDataException(f"Cressie-Read exponent must exceed 1, got {k}")
    if not delta >= 0.0:
        raise DrbcInvalidDataException(f"Radius must be >= 0, got {delta}")

    w = w / w.sum()
    support = z[w > 0.0]
    low, high = float(support.min()), float(support.max())

    if bracket is not None and not (
        math.isfinite(bracket[0]) and math.isfinite(bracket[1]) and bracket[0] < bracket[1]
    ):
        raise DrbcEmptyBracketException(f"Invalid search bracket {bracket}")
    if high == low:
        return low, low
    if delta == 0.0:
        return float(w @ z), math.inf

    k_star = k / (k - 1.0)
    c_k = (1.0 + k * (k - 1.0) * delta) ** (1.0 / k)

    def objective(beta: float) -> float:
        hinge = np.maximum(beta - z, 0.0) ** k_star
        return beta - c_k * float(w @ hinge) ** (1.0 / k_star)

    if bracket is None:
        width = high - low
        reach = 2.0 + 2.0 / ((k - 1.0) * math.sqrt(2.0 * delta))
        bracket = (low - width, high + reach * width)

    lo, hi = bracket
    result = minimize_scalar(
        lambda beta: -objective(beta),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12 * max(1.0, hi - lo)},
    )
    beta_star = max((float(result.x), lo, hi), key=objective)
    return objective(beta_star), beta_star
