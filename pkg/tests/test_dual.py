import math
from dataclasses import dataclass

import numpy as np
import pytest

from drbc.const import StepRule
from drbc.dual import (
    ExactInnerSimulator,
    cressie_read_dual,
    draw_rmlmc_batch,
    evaluate_policy_kl,
    exp_transform,
    exp_transform_derivative,
    kl_dual_exact,
    kl_dual_objective,
    lambda_upper_bound,
    plugin_value,
    rmlmc_derivative,
    rmlmc_estimate_M,
    rmlmc_single,
)
from drbc.exceptions import (
    DrbcEmptyBracketException,
    DrbcInvalidDataException,
    DrbcNoConvergenceException,
    DrbcNonFinitePathException,
    DrbcNonPositiveMException,
)
from drbc.models import AscentSchedule, FinitePrior, FloatArray, RmlmcParams
from drbc.priors import kl_finite, primal_inner_inf, tilt_worst_mean
from drbc.sde import spawn_rng


@dataclass(frozen=True)
class _CoinInner:
    lower_bound: float | None = 0.0

    def sample(self, b: FloatArray | float, count: int, rng: np.random.Generator) -> FloatArray:
        return rng.integers(0, 2, count).astype(np.float64)


@dataclass(frozen=True)
class _ConstantInner:
    value: float
    lower_bound: float | None = None

    def sample(self, b: FloatArray | float, count: int, rng: np.random.Generator) -> FloatArray:
        return np.full(count, self.value)


def _constant(z: float) -> ExactInnerSimulator:
    return ExactInnerSimulator(value=lambda b: z)


def test_kl_dual_objective() -> None:
    assert kl_dual_objective(1.0, 2.0, 0.1) == pytest.approx(-0.2)
    assert kl_dual_objective(math.exp(-1.0), 1.0, 0.0) == pytest.approx(1.0)

    with pytest.raises(DrbcNonPositiveMException):
        kl_dual_objective(0.0, 1.0, 0.1)

    with pytest.raises(DrbcInvalidDataException):
        kl_dual_objective(1.0, 0.0, 0.1)


def test_lambda_upper_bound() -> None:
    assert lambda_upper_bound(2.0, 1.0, 0.5) == 2.0
    assert lambda_upper_bound(1.0, 1.0, 0.5) == 0.0
    assert lambda_upper_bound(0.5, 0.0, 0.0977) == pytest.approx(5.1177, abs=1e-4)

    with pytest.raises(DrbcInvalidDataException):
        lambda_upper_bound(0.0, 1.0, 0.5)

    with pytest.raises(DrbcInvalidDataException):
        lambda_upper_bound(2.0, 1.0, 0.0)


def test_exp_transform() -> None:
    assert float(exp_transform(np.array(1.0), 1.0)) == pytest.approx(math.exp(-1.0))
    assert float(exp_transform_derivative(np.array(1.0), 1.0)) == pytest.approx(0.3679, abs=1e-4)


def test_rmlmc_single_deterministic_inner() -> None:
    value = rmlmc_single(_constant(0.7), 0.0, 2.0, RmlmcParams(), seed=4)

    assert value == pytest.approx(math.exp(-0.35), rel=1e-12)


def test_rmlmc_single_invalid_lambda() -> None:
    with pytest.raises(DrbcInvalidDataException, match="Multiplier"):
        rmlmc_single(_constant(0.7), 0.0, 0.0, RmlmcParams(), seed=4)


def test_rmlmc_is_unbiased_for_noisy_inner() -> None:
    n = 20_000

    m_hat, var_hat = rmlmc_estimate_M(
        _CoinInner(), FinitePrior.point_mass(0.0), 1.0, RmlmcParams(), n, seed=9
    )

    assert abs(m_hat - math.exp(-0.5)) <= 5.0 * math.sqrt(var_hat / n)


def test_rmlmc_estimate_point_mass() -> None:
    m_hat, var_hat = rmlmc_estimate_M(
        _constant(1.5), FinitePrior.point_mass(0.2), 0.5, RmlmcParams(), 10, seed=0
    )

    assert m_hat == pytest.approx(math.exp(-3.0), rel=1e-12)
    assert var_hat == pytest.approx(0.0, abs=1e-24)


def test_rmlmc_estimate_finite_prior(two_point_prior: FinitePrior) -> None:
    sim = ExactInnerSimulator.from_atoms(two_point_prior, np.array([0.0, 1.0]))
    n = 4000

    m_hat, var_hat = rmlmc_estimate_M(sim, two_point_prior, 1.0, RmlmcParams(), n, seed=2)

    assert abs(m_hat - 0.5 * (1.0 + math.exp(-1.0))) <= 4.0 * math.sqrt(var_hat / n)


def test_rmlmc_estimate_invalid_size() -> None:
    with pytest.raises(DrbcInvalidDataException, match="Outer sample size"):
        rmlmc_estimate_M(_constant(1.0), FinitePrior.point_mass(0.0), 1.0, RmlmcParams(), 1, 0)


def test_rmlmc_derivative_deterministic_inner() -> None:
    derivative = rmlmc_derivative(
        _constant(1.0), FinitePrior.point_mass(0.0), 2.0, RmlmcParams(), 8, seed=1
    )

    assert derivative == pytest.approx(0.25 * math.exp(-0.5), rel=1e-12)


def test_rmlmc_derivative_matches_finite_difference(two_point_prior: FinitePrior) -> None:
    sim = ExactInnerSimulator.from_atoms(two_point_prior, np.array([0.0, 1.0]))
    params = RmlmcParams()

    upper, _ = rmlmc_estimate_M(sim, two_point_prior, 1.0 + 1e-4, params, 500, seed=3)
    lower, _ = rmlmc_estimate_M(sim, two_point_prior, 1.0 - 1e-4, params, 500, seed=3)
    derivative = rmlmc_derivative(sim, two_point_prior, 1.0, params, 500, seed=3)

    assert derivative == pytest.approx((upper - lower) / 2e-4, rel=1e-6)


def test_draw_batch_ignores_workers(h4_prior: FinitePrior) -> None:
    serial = draw_rmlmc_batch(_CoinInner(), h4_prior, RmlmcParams(), 64, seed=5)
    threaded = draw_rmlmc_batch(_CoinInner(), h4_prior, RmlmcParams(), 64, seed=5, workers=3)

    assert threaded.full.tolist() == serial.full.tolist()
    assert threaded.levels.tolist() == serial.levels.tolist()
    assert int(serial.levels.min()) >= 3


def test_draw_batch_checks_lower_bound() -> None:
    sim = _ConstantInner(value=0.0, lower_bound=1.0)

    with pytest.raises(DrbcInvalidDataException, match="below the declared bound"):
        draw_rmlmc_batch(sim, FinitePrior.point_mass(0.0), RmlmcParams(), 4, seed=0)


def test_draw_batch_rejects_non_finite() -> None:
    with pytest.raises(DrbcNonFinitePathException):
        draw_rmlmc_batch(
            _ConstantInner(value=math.nan), FinitePrior.point_mass(0.0), RmlmcParams(), 4, seed=0
        )


def test_exact_inner_unknown_atom(two_point_prior: FinitePrior) -> None:
    sim = ExactInnerSimulator.from_atoms(two_point_prior, np.array([0.0, 1.0]))

    assert sim.lower_bound == 0.0
    with pytest.raises(DrbcInvalidDataException, match="not an atom"):
        sim.sample(0.5, 2, spawn_rng(0))


def test_kl_dual_exact_two_point(two_point_prior: FinitePrior) -> None:
    scores = np.array([0.0, 1.0])
    delta = kl_finite(two_point_prior.with_probs(np.array([0.72, 0.28])), two_point_prior)

    value, lam = kl_dual_exact(two_point_prior, scores, delta)

    assert value == pytest.approx(0.28, abs=1e-6)
    assert 0.0 < lam <= lambda_upper_bound(0.5, 0.0, delta)


def test_kl_dual_exact_edge_cases(two_point_prior: FinitePrior) -> None:
    assert kl_dual_exact(two_point_prior, np.array([0.0, 1.0]), 0.0) == (0.5, math.inf)
    assert kl_dual_exact(two_point_prior, np.array([2.0, 2.0]), 0.3) == (2.0, 0.0)


def test_kl_strong_duality() -> None:
    rng = spawn_rng(8)

    for _ in range(100):
        size = int(rng.integers(2, 11))
        prior = FinitePrior(
            values=np.arange(size, dtype=np.float64), probs=rng.dirichlet(np.ones(size))
        )
        scores = rng.uniform(-5.0, 5.0, size)
        delta = math.exp(rng.uniform(math.log(1e-3), math.log(2.0)))

        value, _ = kl_dual_exact(prior, scores, delta)

        assert value == pytest.approx(primal_inner_inf(prior, scores, delta), abs=1e-4)


def test_kl_dual_matches_worst_case_tilt() -> None:
    rng = spawn_rng(9)

    for _ in range(100):
        size = int(rng.integers(2, 11))
        prior = FinitePrior(
            values=np.arange(size, dtype=np.float64), probs=rng.dirichlet(np.ones(size))
        )
        scores = rng.uniform(-5.0, 5.0, size)
        delta = math.exp(rng.uniform(math.log(1e-3), math.log(2.0)))

        value, _ = kl_dual_exact(prior, scores, delta)

        assert value == pytest.approx(tilt_worst_mean(prior, scores, delta).worst_mean, abs=1e-6)


def test_plugin_value_constant_payoff() -> None:
    batch = draw_rmlmc_batch(_constant(1.2), FinitePrior.point_mass(0.0), RmlmcParams(), 16, 0)

    value, std_err, m_hat = plugin_value(batch, 0.5, 0.1)

    assert value == pytest.approx(1.2 - 0.05)
    assert std_err == 0.0
    assert m_hat == 1.0


def test_evaluate_constant_payoff() -> None:
    result = evaluate_policy_kl(
        _constant(3.0), FinitePrior.point_mass(0.1), 0.5, RmlmcParams(), 32, seed=0
    )

    assert result.robust_value == pytest.approx(3.0)
    assert result.iterations == 0
    assert result.converged


def test_evaluate_two_point_prior(two_point_prior: FinitePrior) -> None:
    sim = ExactInnerSimulator.from_atoms(two_point_prior, np.array([0.0, 1.0]))
    delta = kl_finite(two_point_prior.with_probs(np.array([0.72, 0.28])), two_point_prior)

    result = evaluate_policy_kl(
        sim,
        two_point_prior,
        delta,
        RmlmcParams(),
        50_000,
        AscentSchedule(rule=StepRule.SIGN_ADAPTIVE, fixed_batch=True),
        seed=1,
    )

    assert result.robust_value == pytest.approx(0.28, abs=0.01)
    assert 0.0 < result.lambda_star <= result.lambda_upper_bound
    assert result.std_err >= 0.0
    assert result.n_outer == 50_000


def test_evaluate_monotone_in_radius(two_point_prior: FinitePrior) -> None:
    sim = ExactInnerSimulator.from_atoms(two_point_prior, np.array([0.0, 1.0]))
    ascent = AscentSchedule(rule=StepRule.SIGN_ADAPTIVE, fixed_batch=True)

    small = evaluate_policy_kl(sim, two_point_prior, 0.05, RmlmcParams(), 2000, ascent, seed=6)
    large = evaluate_policy_kl(sim, two_point_prior, 0.2, RmlmcParams(), 2000, ascent, seed=6)

    assert small.robust_value >= large.robust_value


def test_evaluate_diminishing_steps(two_point_prior: FinitePrior) -> None:
    sim = ExactInnerSimulator.from_atoms(two_point_prior, np.array([0.0, 1.0]))

    result = evaluate_policy_kl(
        sim,
        two_point_prior,
        0.1,
        RmlmcParams(),
        500,
        AscentSchedule(rule=StepRule.DIMINISHING, max_iters=20),
        seed=2,
    )

    assert 0.0 < result.lambda_star <= result.lambda_upper_bound
    assert result.robust_value <= 1.0


def test_evaluate_keeps_best_iterate(two_point_prior: FinitePrior) -> None:
    scores = np.array([0.0, 1.0])
    sim = ExactInnerSimulator.from_atoms(two_point_prior, scores)
    _, lam_star = kl_dual_exact(two_point_prior, scores, 0.1)
    ascent = AscentSchedule(
        lambda0=lam_star,
        rule=StepRule.DIMINISHING,
        step0=1e3,
        max_iters=3,
        fixed_batch=True,
    )

    result = evaluate_policy_kl(sim, two_point_prior, 0.1, RmlmcParams(), 2000, ascent, seed=3)

    batch = draw_rmlmc_batch(sim, two_point_prior, RmlmcParams(), 2000, 3)
    start = min(lam_star, result.lambda_upper_bound)
    assert not result.converged
    assert result.robust_value >= plugin_value(batch, start, 0.1)[0] - 1e-12


def test_evaluate_strict_no_convergence(two_point_prior: FinitePrior) -> None:
    sim = ExactInnerSimulator.from_atoms(two_point_prior, np.array([0.0, 1.0]))

    with pytest.raises(DrbcNoConvergenceException):
        evaluate_policy_kl(
            sim,
            two_point_prior,
            0.1,
            RmlmcParams(),
            100,
            AscentSchedule(rule=StepRule.SIGN_ADAPTIVE, max_iters=1),
            seed=0,
            strict=True,
        )


def test_evaluate_invalid_arguments(two_point_prior: FinitePrior) -> None:
    sim = ExactInnerSimulator.from_atoms(two_point_prior, np.array([0.0, 1.0]))

    with pytest.raises(DrbcInvalidDataException, match="Radius"):
        evaluate_policy_kl(sim, two_point_prior, 0.0, RmlmcParams(), 100)

    with pytest.raises(DrbcInvalidDataException, match="Outer sample size"):
        evaluate_policy_kl(sim, two_point_prior, 0.1, RmlmcParams(), 1)


def test_cressie_read_chi_square() -> None:
    value, beta = cressie_read_dual(np.array([0.0, 1.0]), np.array([0.5, 0.5]), 2.0, 0.1)

    assert value == pytest.approx(0.5 - math.sqrt(0.05), abs=1e-6)
    assert beta == pytest.approx(0.5 + math.sqrt(1.25), abs=1e-4)


def test_cressie_read_edge_cases() -> None:
    z = np.array([0.0, 1.0])
    w = np.array([0.5, 0.5])

    assert cressie_read_dual(z, w, 2.0, 0.0) == (0.5, math.inf)
    assert cressie_read_dual(np.array([0.7, 0.7]), w, 3.0, 0.4) == (0.7, 0.7)


def test_cressie_read_invalid() -> None:
    z = np.array([0.0, 1.0])
    w = np.array([0.5, 0.5])

    with pytest.raises(DrbcEmptyBracketException):
        cressie_read_dual(z, w, 2.0, 0.1, bracket=(1.0, 0.0))

    with pytest.raises(DrbcEmptyBracketException):
        cressie_read_dual(z, w, 2.0, 0.1, bracket=(0.0, math.inf))

    with pytest.raises(DrbcInvalidDataException, match="exponent"):
        cressie_read_dual(z, w, 1.0, 0.1)

    with pytest.raises(DrbcInvalidDataException, match="Weights"):
        cressie_read_dual(z, np.array([-0.5, 1.5]), 2.0, 0.1)
