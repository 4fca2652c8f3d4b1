"""Bayesian Merton portfolio selection with finite priors on the drift.

The Bayes-optimal fraction depends on the observations only through
Y_t = (B - r) t / sigma + W_t, and on the prior only through the mixture

    F(t, y) = sum_i p_i exp(nu_i y - nu_i^2 t / 2),    nu_i = (b_i - r) / sigma.

Gaussian integrals of powers of F are evaluated in log space by Gauss-Hermite
quadrature.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Self

import numpy as np
from scipy.special import logsumexp

from drbc.const import DEFAULT_N_GH, PolicyTag, Sense
from drbc.dual import evaluate_policy_kl
from drbc.exceptions import (
    DrbcComplexRootException,
    DrbcInvalidDataException,
    DrbcInvalidPException,
    DrbcNoConvergenceException,
    DrbcQuadratureUnderflowException,
    DrbcZeroVarianceException,
)
from drbc.models import (
    AscentSchedule,
    DualEvalResult,
    FinitePrior,
    FloatArray,
    MertonMarket,
    QuadratureRule,
    RmlmcParams,
    TimeGrid,
)
from drbc.priors import kl_finite, tilt_worst_mean
from drbc.sde import simulate_wealth_batch

__all__ = [
    "FractionPolicy",
    "LearnSchedule",
    "FiniteLearnResult",
    "AlternateResult",
    "ClosedFormParams",
    "PerformanceSummary",
    "BayesTerminalInnerSimulator",
    "MertonInnerSimulator",
    "f_mixture",
    "bayes_fraction",
    "bayes_value",
    "bayes_conditional_value",
    "merton_fraction",
    "drc_fraction",
    "drc_fraction_vector",
    "drbc_finite_learn",
    "drbc_merton_alternate",
    "cosine_drift",
    "true_cosine_policy",
    "closed_form_coefficients",
    "closed_form_terminal_wealth",
    "closed_form_conditional_utility",
    "sample_closed_form_utilities",
    "mean_utility",
    "sharpe_ratio",
    "sharpe_and_utility",
]

_LOGGER = logging.getLogger(__name__)

_MAX_STEP_HALVINGS = 40


def _log_mixture(
    t: float,
    y: FloatArray,
    values: FloatArray,
    weights: FloatArray,
    market: MertonMarket,
) -> tuple[FloatArray, FloatArray]:
    """Return log F(t, y) and dF/F for positive, possibly unnormalized weights."""
    charged = weights > 0.0
    nu = (values[charged] - market.r) / market.sigma
    log_terms = (
        np.log(weights[charged])
        + nu * np.asarray(y, dtype=np.float64)[..., np.newaxis]
        - 0.5 * nu**2 * t
    )
    log_f = logsumexp(log_terms, axis=-1)
    ratio = np.exp(log_terms - log_f[..., np.newaxis]) @ nu
    return np.asarray(log_f, dtype=np.float64), np.asarray(ratio, dtype=np.float64)


def _check_scalar_prior(prior: FinitePrior) -> None:
    if prior.values.ndim != 1:
        raise DrbcInvalidDataException("Merton priors must have scalar atoms")


def f_mixture(
    t: float, y: FloatArray | float, prior: FinitePrior, market: MertonMarket
) -> tuple[FloatArray, FloatArray]:
    """Evaluate the likelihood mixture F(t, y) and its y-derivative."""
    if t < 0.0:
        raise DrbcInvalidDataException(f"Time must be >= 0, got {t}")
    _check_scalar_prior(prior)

    log_f, ratio = _log_mixture(t, np.asarray(y), prior.values, prior.probs, market)
    F = np.exp(log_f)
    return F, F * ratio


def _log_power_integral(
    values: FloatArray,
    weights: FloatArray,
    market: MertonMarket,
    quad: QuadratureRule,
    y: FloatArray,
    tau: float,
    power: float,
) -> tuple[FloatArray, FloatArray]:
    """Log of int F(T, z + y)^power phi_tau(z) dz, and the dF/F-weighted mean."""
    points = np.asarray(y, dtype=np.float64)[..., np.newaxis] + quad.scaled_nodes(tau)
    log_f, ratio = _log_mixture(market.T, points, values, weights, market)
    exponent = power * log_f
    top = np.max(exponent, axis=-1, keepdims=True)
    scaled = quad.weights * np.exp(exponent - top)
    total = scaled.sum(axis=-1)

    if np.any(~np.isfinite(total)) or np.any(total <= 0.0):
        raise DrbcQuadratureUnderflowException(
            "Quadrature sum underflowed after log-space factoring"
        )
    weighted_ratio = (scaled * ratio).sum(axis=-1) / total
    return np.log(total) + top[..., 0], weighted_ratio


def bayes_fraction(
    t: float,
    y: FloatArray | float,
    prior: FinitePrior,
    market: MertonMarket,
    quad: QuadratureRule,
) -> FloatArray:
    """Bayes-optimal fraction at time `t` for every observation in `y`.

    The fraction is the F^(1/(1-alpha))-weighted mean of dF/F over the
    N(y, T - t) law of Y_T, divided by (1 - alpha) sigma.

    Raises:
        DrbcQuadratureUnderflowException: If the denominator integral underflows.
    """
    if not 0.0 <= t <= market.T:
        raise DrbcInvalidDataException(f"Time must lie in [0, {market.T}], got {t}")
    _check_scalar_prior(prior)

    power = 1.0 / (1.0 - market.alpha)
    _, weighted_ratio = _log_power_integral(
        prior.values, prior.probs, market, quad, np.asarray(y), market.T - t, power
    )
    return np.asarray(
        weighted_ratio / ((1.0 - market.alpha) * market.sigma), dtype=np.float64
    )


def _log_scale(market: MertonMarket) -> float:
    return market.alpha * (math.log(market.x0) + market.r * market.T) - math.log(
        market.alpha
    )


def _mixture_value(
    values: FloatArray, weights: FloatArray, market: MertonMarket, quad: QuadratureRule
) -> float:
    power = 1.0 / (1.0 - market.alpha)
    log_integral, _ = _log_power_integral(
        values, weights, market, quad, np.zeros(()), market.T, power
    )
    return math.exp(_log_scale(market) + (1.0 - market.alpha) * float(log_integral))


def bayes_value(prior: FinitePrior, market: MertonMarket, quad: QuadratureRule) -> float:
    """Bayes value (x0 e^{rT})^alpha / alpha (int F(T, z)^(1/(1-alpha)) phi_T(z) dz)^(1-alpha)."""
    _check_scalar_prior(prior)
    return _mixture_value(prior.values, prior.probs, market, quad)


def _log_optimal_normalizer(
    prior: FinitePrior, market: MertonMarket, quad: QuadratureRule
) -> float:
    log_integral, _ = _log_power_integral(
        prior.values,
        prior.probs,
        market,
        quad,
        np.zeros(()),
        market.T,
        1.0 / (1.0 - market.alpha),
    )
    return float(log_integral)


def bayes_conditional_value(
    b: float, prior: FinitePrior, market: MertonMarket, quad: QuadratureRule
) -> float:
    """Expected utility of the Bayes policy for `prior` when the drift is `b`.

    Averaging over b ~ prior gives `bayes_value(prior)`.
    """
    _check_scalar_prior(prior)
    alpha = market.alpha
    log_normalizer = _log_optimal_normalizer(prior, market, quad)
    nu_b = (b - market.r) / market.sigma
    log_integral, _ = _log_power_integral(
        prior.values,
        prior.probs,
        market,
        quad,
        np.asarray(nu_b * market.T),
        market.T,
        alpha / (1.0 - alpha),
    )
    return math.exp(_log_scale(market) - alpha * log_normalizer + float(log_integral))


def merton_fraction(b: float, market: MertonMarket) -> float:
    """Classical constant fraction (b - r) / ((1 - alpha) sigma^2)."""
    return (b - market.r) / ((1.0 - market.alpha) * market.sigma**2)


def drc_fraction(prior: FinitePrior, market: MertonMarket, delta: float) -> float:
    """Constant fraction at the KL-worst mean drift."""
    _check_scalar_prior(prior)
    tilt = tilt_worst_mean(prior, prior.values, delta, Sense.MIN)
    return merton_fraction(tilt.worst_mean, market)


def drc_fraction_vector(
    prior: FinitePrior, market: MertonMarket, cov: FloatArray, delta: float
) -> FloatArray:
    """Constant fractions Sigma^-1 (mu_worst - r) / (1 - alpha) for vector-valued drifts."""
    if prior.values.ndim != 2:
        raise DrbcInvalidDataException("Vector DRC needs vector-valued atoms")
    cov = np.asarray(cov, dtype=np.float64)
    dim = prior.values.shape[1]
    if cov.shape != (dim, dim):
        raise DrbcInvalidDataException(f"Covariance must be {dim}x{dim}")

    tilt = tilt_worst_mean(prior, prior.values.sum(axis=1), delta, Sense.MIN)
    excess = tilt.worst_values - market.r
    return np.asarray(
        np.linalg.solve(cov, excess) / (1.0 - market.alpha), dtype=np.float64
    )


def cosine_drift(b0: float, kappa: float) -> Callable[[float], float]:
    """B_t = (b0 / 2)(1 + cos(kappa t))."""

    def drift(t: float) -> float:
        return 0.5 * b0 * (1.0 + math.cos(kappa * t))

    return drift


@dataclass(frozen=True, eq=False)
class FractionPolicy:
    """Investment fraction (t, y) -> pi_t with a tag and JSON-able parameters.

    Attributes:
        tag(PolicyTag): The policy family.
        fraction(Callable): The map (t, y) -> fraction.
        params(dict[str, Any]): Parameters for snapshots.
    """

    tag: PolicyTag
    fraction: Callable[[float, FloatArray], FloatArray | float] = field(repr=False)
    params: dict[str, Any] = field(default_factory=dict)

    def __call__(self, t: float, y: FloatArray) -> FloatArray | float:
        return self.fraction(t, y)

    @classmethod
    def constant(cls, value: float) -> Self:
        """Invest the fixed fraction `value`."""
        return cls(PolicyTag.CONSTANT, lambda t, y: value, {"fraction": value})

    @classmethod
    def merton(cls, b: float, market: MertonMarket) -> Self:
        """Classical Merton fraction for a known drift."""
        value = merton_fraction(b, market)
        return cls(PolicyTag.CONSTANT, lambda t, y: value, {"fraction": value, "b": b})

    @classmethod
    def bayesian(
        cls, prior: FinitePrior, market: MertonMarket, quad: QuadratureRule
    ) -> Self:
        """Bayes-optimal fraction for `prior`."""
        return cls(
            PolicyTag.BAYESIAN,
            lambda t, y: bayes_fraction(t, y, prior, market, quad),
            {"prior": prior.to_dict()},
        )

    @classmethod
    def drbc(
        cls, q_star: FinitePrior, market: MertonMarket, quad: QuadratureRule
    ) -> Self:
        """Bayes-optimal fraction for the worst-case prior `q_star`."""
        return cls(
            PolicyTag.DRBC,
            lambda t, y: bayes_fraction(t, y, q_star, market, quad),
            {"prior": q_star.to_dict()},
        )

    @classmethod
    def drc(cls, prior: FinitePrior, market: MertonMarket, delta: float) -> Self:
        """Constant fraction at the worst mean drift of the KL ball."""
        value = drc_fraction(prior, market, delta)
        return cls(PolicyTag.DRC, lambda t, y: value, {"fraction": value, "delta": delta})

    @classmethod
    def time_varying(cls, func: Callable[[float], float], name: str) -> Self:
        """Deterministic fraction depending on time only."""
        return cls(PolicyTag.TIME_VARYING, lambda t, y: func(t), {"name": name})

    def to_dict(self) -> dict[str, Any]:
        return {"type": str(self.tag), "params": self.params}


def true_cosine_policy(b0: float, kappa: float, market: MertonMarket) -> FractionPolicy:
    """Optimal fraction (B_t - r) / ((1 - alpha) sigma^2) for the known cosine drift."""
    drift = cosine_drift(b0, kappa)
    return FractionPolicy.time_varying(
        lambda t: merton_fraction(drift(t), market), f"cosine(b0={b0}, kappa={kappa})"
    )


@dataclass(frozen=True)
class BayesTerminalInnerSimulator:
    """Exact utility samples of the Bayes policy for `prior` under a fixed drift.

    The optimal terminal wealth is x0 e^{rT} F(T, Y_T)^(1/(1-alpha)) / I with
    Y_T ~ N(nu_b T, T) given the drift, so no path simulation is needed.
    """

    prior: FinitePrior
    market: MertonMarket
    quad: QuadratureRule
    lower_bound: float | None = 0.0
    _log_normalizer: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        _check_scalar_prior(self.prior)
        object.__setattr__(
            self,
            "_log_normalizer",
            _log_optimal_normalizer(self.prior, self.market, self.quad),
        )

    def sample(
        self, b: FloatArray | float, count: int, rng: np.random.Generator
    ) -> FloatArray:
        """Draw `count` terminal utilities given drift `b`."""
        market = self.market
        nu_b = (float(b) - market.r) / market.sigma
        y_T = nu_b * market.T + math.sqrt(market.T) * rng.standard_normal(count)
        log_f, _ = _log_mixture(market.T, y_T, self.prior.values, self.prior.probs, market)
        log_wealth = (
            math.log(market.x0)
            + market.r * market.T
            + log_f / (1.0 - market.alpha)
            - self._log_normalizer
        )
        return np.asarray(np.exp(market.alpha * log_wealth) / market.alpha)


@dataclass(frozen=True)
class MertonInnerSimulator:
    """Utility samples from Euler wealth paths under a fixed drift.

    Each sample averages `paths_per_sample` terminal utilities.
    """

    market: MertonMarket
    policy: FractionPolicy
    grid: TimeGrid
    paths_per_sample: int = 1
    lower_bound: float | None = 0.0

    def sample(
        self, b: FloatArray | float, count: int, rng: np.random.Generator
    ) -> FloatArray:
        """Simulate `count * paths_per_sample` paths under drift `b`."""
        n = count * self.paths_per_sample
        increments = rng.standard_normal((n, self.grid.steps)) * math.sqrt(self.grid.dt)
        wealth, _ = simulate_wealth_batch(
            self.market, float(b), self.policy, increments, self.grid
        )
        utilities = self.market.utility(wealth[:, -1])
        return np.asarray(utilities.reshape(count, self.paths_per_sample).mean(axis=1))


@dataclass(frozen=True)
class LearnSchedule:
    """Settings of finite-prior DRBC learning.

    Attributes:
        h(float): Central-difference step.
        step(float | None): Initial step; None picks 0.5 / (lam + V(p)).
        tol(float): Stop when the squared change of q falls below it.
        max_iters(int): Iteration limit.
    """

    h: float = 1e-6
    step: float | None = None
    tol: float = 1e-12
    max_iters: int = 500

    def __post_init__(self) -> None:
        if not self.h > 0.0 or not self.tol > 0.0 or self.max_iters < 1:
            raise DrbcInvalidDataException("h and tol must be positive, max_iters >= 1")
        if self.step is not None and not self.step > 0.0:
            raise DrbcInvalidDataException("step must be positive")


@dataclass(frozen=True, eq=False)
class FiniteLearnResult:
    """Outcome of finite-prior DRBC learning.

    Attributes:
        q_star(FinitePrior): The worst-case prior.
        value(float): The penalized value V(q*) + lam KL(q* || p).
        iterations(int): Iterations used.
        converged(bool): Whether the stopping rule fired.
        history(list[float]): Penalized value after every accepted iteration.
    """

    q_star: FinitePrior
    value: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)


def drbc_finite_learn(
    prior: FinitePrior,
    market: MertonMarket,
    delta: float,
    lam: float,
    schedule: LearnSchedule | None = None,
    quad: QuadratureRule | None = None,
    *,
    strict: bool = False,
) -> FiniteLearnResult:
    """Minimize V(q) + lam KL(q || p) over priors on the atoms of `prior`.

    Uses central differences of V and the entropic step
    log q <- log q - step * GF followed by normalization, where
    GF_i = dV/dq_i + lam (log(q_i / p_i) + 1). Steps that do not decrease the
    penalized value are halved.

    Args:
        prior (FinitePrior): The baseline prior, positive on every atom.
        market (MertonMarket): The market.
        delta (float): The radius, only validated here; the multiplier is fixed.
        lam (float): The multiplier.
        schedule (LearnSchedule | None, optional): Iteration settings. Defaults to LearnSchedule().
        quad (QuadratureRule | None, optional): The quadrature. Defaults to 64 Gauss-Hermite nodes.
        strict (bool, optional): Raise when the iteration limit is reached. Defaults to False.

    Returns:
        FiniteLearnResult: The worst-case prior and the penalized value.

    Raises:
        DrbcNoConvergenceException: If `strict` is set and `max_iters` is reached.
    """
    _check_scalar_prior(prior)
    if not lam > 0.0:
        raise DrbcInvalidDataException(f"Multiplier must be positive, got {lam}")
    if not delta >= 0.0:
        raise DrbcInvalidDataException(f"Radius must be >= 0, got {delta}")
    if not prior.has_full_support:
        raise DrbcInvalidDataException("Baseline prior must charge every atom")
    schedule = schedule or LearnSchedule()
    quad = quad or QuadratureRule.gauss_hermite(DEFAULT_N_GH)

    values = prior.values
    log_p = np.log(prior.probs)

    def value_of(weights: FloatArray) -> float:
        return _mixture_value(values, weights, market, quad)

    def penalized(log_q: FloatArray) -> float:
        q = np.exp(log_q)
        return value_of(q) + lam * max(0.0, float(q @ (log_q - log_p)))

    def gradient(log_q: FloatArray) -> FloatArray:
        q = np.exp(log_q)
        grad = np.empty_like(q)
        for i in range(q.size):
            offset = np.zeros_like(q)
            offset[i] = schedule.h
            if q[i] > schedule.h:
                grad[i] = (value_of(q + offset) - value_of(q - offset)) / (2.0 * schedule.h)
            else:
                # one-sided near the boundary of the simplex
                grad[i] = (value_of(q + offset) - value_of(q)) / schedule.h
        return grad + lam * (log_q - log_p + 1.0)

    log_q = log_p.copy()
    current = penalized(log_q)
    step = schedule.step or 0.5 / (lam + value_of(prior.probs))
    history = [current]
    converged = False
    iterations = 0

    for iteration in range(schedule.max_iters):
        iterations = iteration + 1
        direction = gradient(log_q)
        for _ in range(_MAX_STEP_HALVINGS):
            candidate = log_q - step * direction
            candidate -= logsumexp(candidate)
            candidate_value = penalized(candidate)
            if candidate_value <= current:
                break
            step *= 0.5
        else:
            _LOGGER.debug("No decreasing step at iteration %d, q is stationary", iteration)
            converged = True
            break

        change = float(np.sum((np.exp(candidate) - np.exp(log_q)) ** 2))
        log_q, current = candidate, candidate_value
        history.append(current)
        _LOGGER.debug("iteration %d: value=%.10g change=%.3e", iteration, current, change)
        if change < schedule.tol:
            converged = True
            break

    if not converged:
        if strict:
            raise DrbcNoConvergenceException(
                f"Finite-prior learning did not converge in {schedule.max_iters} iterations"
            )
        _LOGGER.warning("Finite-prior learning stopped after %d iterations", iterations)

    q = np.exp(log_q)
    return FiniteLearnResult(
        q_star=prior.with_probs(q / q.sum()),
        value=current,
        iterations=iterations,
        converged=converged,
        history=history,
    )


@dataclass(frozen=True, eq=False)
class AlternateResult:
    """Outcome of alternating finite-prior learning and KL evaluation.

    Attributes:
        learned(FiniteLearnResult): The last learning step.
        lam(float): The final multiplier.
        evaluation(DualEvalResult): The last robust evaluation.
        rounds(int): Rounds used.
        converged(bool): Whether the multiplier settled.
        kl(float): KL(q* || p) of the final worst-case prior.
    """

    learned: FiniteLearnResult
    lam: float
    evaluation: DualEvalResult
    rounds: int
    converged: bool
    kl: float


def drbc_merton_alternate(
    prior: FinitePrior,
    market: MertonMarket,
    delta: float,
    params: RmlmcParams,
    n_outer: int,
    *,
    C: float = 0.33,
    lam0: float | None = None,
    schedule: LearnSchedule | None = None,
    ascent: AscentSchedule | None = None,
    quad: QuadratureRule | None = None,
    max_rounds: int = 20,
    tol: float = 1e-3,
    seed: int = 0,
    workers: int = 1,
) -> AlternateResult:
    """Alternate policy learning at fixed lam with KL evaluation updating lam.

    Starts from lam = C / sqrt(delta) unless `lam0` is given and stops once
    consecutive multipliers differ by less than `tol`.
    """
    if not delta > 0.0:
        raise DrbcInvalidDataException(f"Radius must be positive, got {delta}")
    if max_rounds < 1:
        raise DrbcInvalidDataException("max_rounds must be >= 1")
    quad = quad or QuadratureRule.gauss_hermite(DEFAULT_N_GH)
    lam = lam0 if lam0 is not None else C / math.sqrt(delta)

    learned: FiniteLearnResult | None = None
    evaluation: DualEvalResult | None = None
    converged = False
    rounds = 0

    for round_index in range(max_rounds):
        rounds = round_index + 1
        learned = drbc_finite_learn(prior, market, delta, lam, schedule, quad)
        sim = BayesTerminalInnerSimulator(learned.q_star, market, quad)
        evaluation = evaluate_policy_kl(
            sim,
            prior,
            delta,
            params,
            n_outer,
            ascent,
            seed=seed + round_index,
            workers=workers,
        )
        _LOGGER.debug(
            "round %d: lambda %.6g -> %.6g, robust value %.6g",
            round_index,
            lam,
            evaluation.lambda_star,
            evaluation.robust_value,
        )
        previous, lam = lam, evaluation.lambda_star
        if abs(lam - previous) < tol:
            converged = True
            break

    if learned is None or evaluation is None:
        raise DrbcInvalidDataException("No alternation round was run")
    if not converged:
        _LOGGER.warning("Multiplier did not settle after %d rounds", rounds)

    return AlternateResult(
        learned=learned,
        lam=lam,
        evaluation=evaluation,
        rounds=rounds,
        converged=converged,
        kl=kl_finite(learned.q_star, prior),
    )


@dataclass(frozen=True)
class ClosedFormParams:
    """Constants of the closed-form robust terminal wealth.

    Attributes:
        gamma(float): Exponent of the power ambiguity function, in (0, 1).
        sigma0(float): Standard deviation of the Gaussian drift prior.
        b0(float): Reference drift.
        mu0(float): Mean of the Gaussian drift prior.
    """

    gamma: float = 0.5
    sigma0: float = 2.0
    b0: float = 0.1
    mu0: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise DrbcInvalidDataException(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.sigma0 > 0.0:
            raise DrbcInvalidDataException("sigma0 must be positive")


def closed_form_coefficients(
    market: MertonMarket, phi: ClosedFormParams
) -> tuple[float, float, float]:
    """Return the (p, q, c) coefficients of the closed-form terminal wealth.

    Raises:
        DrbcComplexRootException: If the discriminant of p is negative.
    """
    alpha, gamma = market.alpha, phi.gamma
    s2 = phi.sigma0**2
    inv = 1.0 / (1.0 - alpha)
    discriminant = s2**2 + (2.0 - 4.0 * alpha) * inv * s2 + inv**2 - 4.0 * alpha * inv * gamma
    if discriminant < 0.0:
        raise DrbcComplexRootException(
            f"Discriminant {discriminant:.6g} is negative for alpha={alpha}, gamma={gamma}"
        )

    p = (inv + s2 - math.sqrt(discriminant)) / (2.0 * (s2 + gamma))
    nu = (phi.b0 - market.r) / market.sigma
    q = alpha * (1.0 - p) * nu / ((1.0 - alpha) * (1.0 - gamma * p))
    c = alpha * (
        math.log(market.x0)
        + market.r * market.T
        + (nu**2 - (nu - q / alpha) ** 2 / (1.0 - p / alpha)) * market.T / 2.0
    )
    return p, q, c


def closed_form_terminal_wealth(
    w_T: FloatArray | float,
    b: FloatArray | float,
    market: MertonMarket,
    phi: ClosedFormParams,
) -> FloatArray:
    """X*_T = exp((p D^2 / (2T) + q D + c) / alpha) with D = W_T + (B - b0) T / sigma.

    `w_T` is the observed Brownian motion at T, so under the drift b the
    statistic D is N((b - b0) T / sigma, T) whatever B is. The horizon factor
    in the drift term is what `closed_form_conditional_utility` integrates.
    """
    p, q, c = closed_form_coefficients(market, phi)
    D = np.asarray(w_T) + (np.asarray(b) - phi.b0) * market.T / market.sigma
    return np.asarray(
        np.exp((p * D**2 / (2.0 * market.T) + q * D + c) / market.alpha),
        dtype=np.float64,
    )


def closed_form_conditional_utility(
    b: float, market: MertonMarket, phi: ClosedFormParams
) -> float:
    """Expected utility of the closed-form terminal wealth given the drift `b`.

    Raises:
        DrbcInvalidPException: If p >= 1.
    """
    p, q, c = closed_form_coefficients(market, phi)
    if p >= 1.0:
        raise DrbcInvalidPException(f"p={p:.6g} must be below 1")

    T = market.T
    nu_b = (phi.b0 - b) / market.sigma
    exponent = (
        p * T * nu_b**2 / (2.0 * (1.0 - p))
        - q * T * nu_b / (1.0 - p)
        + q**2 * T / (2.0 * (1.0 - p))
        + c
    )
    return math.exp(exponent) / (market.alpha * math.sqrt(1.0 - p))


def sample_closed_form_utilities(
    b: float,
    market: MertonMarket,
    phi: ClosedFormParams,
    n: int,
    rng: np.random.Generator,
) -> FloatArray:
    """Utilities of the closed-form wealth with B ~ N(mu0, sigma0^2) and W_T = sqrt(T) N - (B - b) T / sigma."""
    if n < 1:
        raise DrbcInvalidDataException(f"Sample size must be >= 1, got {n}")
    B = phi.mu0 + phi.sigma0 * rng.standard_normal(n)
    w_T = math.sqrt(market.T) * rng.standard_normal(n) - (B - b) * market.T / market.sigma
    return market.utility(closed_form_terminal_wealth(w_T, B, market, phi))


def mean_utility(terminals: FloatArray, market: MertonMarket) -> float:
    """Average utility of terminal wealth levels."""
    terminals = np.asarray(terminals, dtype=np.float64)
    if terminals.size == 0:
        raise DrbcInvalidDataException("Need at least one terminal wealth")
    return float(np.mean(market.utility(terminals)))


def sharpe_ratio(terminals: FloatArray, market: MertonMarket) -> float:
    """Mean excess gross return over the risk-free growth divided by its standard deviation.

    Raises:
        DrbcZeroVarianceException: If all terminal values are equal.
    """
    terminals = np.asarray(terminals, dtype=np.float64)
    if terminals.size < 2:
        raise DrbcInvalidDataException("Need at least two terminal wealth levels")

    gross = terminals / market.x0
    spread = float(np.std(gross, ddof=1))
    if spread == 0.0:
        raise DrbcZeroVarianceException("Terminal wealth has zero variance")
    return float(np.mean(gross - math.exp(market.r * market.T))) / spread


@dataclass(frozen=True)
class PerformanceSummary:
    """Sharpe ratio and mean utility of a set of terminal wealth levels."""

    sharpe: float
    mean_utility: float


def sharpe_and_utility(terminals: FloatArray, market: MertonMarket) -> PerformanceSummary:
    """Compute both performance metrics."""
    return PerformanceSummary(
        sharpe=sharpe_ratio(terminals, market),
        mean_utility=mean_utility(terminals, market),
    )
