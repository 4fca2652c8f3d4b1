import math

import numpy as np
import pytest

from drbc.const import TILT_KL_TOL, DivergenceKind, Sense
from drbc.exceptions import (
    DrbcDegenerateScoresException,
    DrbcInvalidDataException,
    DrbcSupportMismatchException,
)
from drbc.models import FinitePrior, GaussianPrior, RadiusSpec
from drbc.priors import (
    atom_scores,
    cressie_read_phi,
    divergence_primal_inf,
    kl_finite,
    primal_inner_inf,
    sample_prior,
    tilt_worst_mean,
)
from drbc.sde import spawn_rng


def test_sample_point_mass() -> None:
    draws = sample_prior(FinitePrior.point_mass(0.3), 0, 100)

    assert draws.tolist() == [0.3] * 100


def test_sample_finite_frequencies() -> None:
    prior = FinitePrior(values=[0.0, 1.0], probs=[0.3, 0.7])
    n = 100_000

    draws = sample_prior(prior, 11, n)

    assert abs(float(draws.mean()) - 0.7) <= 4.0 * math.sqrt(0.21 / n)
    assert sample_prior(prior, 11, n).tolist() == draws.tolist()


def test_sample_gaussian_moments() -> None:
    n = 100_000

    draws = sample_prior(GaussianPrior(mean=0.1, std=2.0), 5, n)

    assert abs(float(draws.mean()) - 0.1) <= 4.0 * 2.0 / math.sqrt(n)
    assert float(draws.std()) == pytest.approx(2.0, rel=0.02)
    assert sample_prior(GaussianPrior(mean=0.0, std=1.0, dim=3), 5, 4).shape == (4, 3)


def test_sample_invalid_size() -> None:
    with pytest.raises(DrbcInvalidDataException):
        sample_prior(FinitePrior.point_mass(0.3), 0, 0)


def test_kl_finite(two_point_prior: FinitePrior) -> None:
    assert kl_finite(two_point_prior, two_point_prior) == 0.0
    assert kl_finite(
        two_point_prior.with_probs(np.array([1.0, 0.0])), two_point_prior
    ) == pytest.approx(math.log(2.0))
    assert kl_finite(
        two_point_prior.with_probs(np.array([0.72, 0.28])), two_point_prior
    ) == pytest.approx(0.100194, abs=1e-6)


def test_kl_finite_not_absolutely_continuous(two_point_prior: FinitePrior) -> None:
    degenerate = two_point_prior.with_probs(np.array([1.0, 0.0]))

    assert kl_finite(two_point_prior, degenerate) == math.inf


def test_kl_finite_support_mismatch(two_point_prior: FinitePrior) -> None:
    with pytest.raises(DrbcSupportMismatchException):
        kl_finite(two_point_prior, FinitePrior(values=[0.0, 2.0], probs=[0.5, 0.5]))


def test_kl_finite_nonnegative() -> None:
    rng = spawn_rng(0)
    values = np.arange(6, dtype=np.float64)

    for _ in range(200):
        q = FinitePrior(values=values, probs=rng.dirichlet(np.ones(6)))
        p = FinitePrior(values=values, probs=rng.dirichlet(np.ones(6)))
        assert kl_finite(q, p) > 0.0


def test_tilt_zero_radius(h4_prior: FinitePrior) -> None:
    result = tilt_worst_mean(h4_prior, h4_prior.values, 0.0)

    assert result.q_star is h4_prior
    assert result.worst_mean == pytest.approx(float(h4_prior.mean))


def test_tilt_binds_constraint(two_point_prior: FinitePrior) -> None:
    delta = kl_finite(two_point_prior.with_probs(np.array([0.72, 0.28])), two_point_prior)

    result = tilt_worst_mean(two_point_prior, np.array([0.0, 1.0]), delta)

    assert result.q_star.probs == pytest.approx([0.72, 0.28], abs=1e-8)
    assert result.worst_mean == pytest.approx(0.28, abs=1e-8)
    assert result.kl == pytest.approx(delta, abs=1e-10)
    assert result.alpha_star > 0.0
    assert not result.saturated


def test_tilt_rounded_radius(two_point_prior: FinitePrior) -> None:
    result = tilt_worst_mean(two_point_prior, np.array([0.0, 1.0]), 0.0977)

    assert result.worst_mean == pytest.approx(0.28, abs=5e-3)


def test_tilt_maximize(two_point_prior: FinitePrior) -> None:
    delta = kl_finite(two_point_prior.with_probs(np.array([0.72, 0.28])), two_point_prior)

    result = tilt_worst_mean(two_point_prior, np.array([0.0, 1.0]), delta, Sense.MAX)

    assert result.worst_mean == pytest.approx(0.72, abs=1e-8)


def test_tilt_saturated(h4_prior: FinitePrior) -> None:
    result = tilt_worst_mean(h4_prior, h4_prior.values, -math.log(0.05) + 0.1)

    assert result.saturated
    assert result.alpha_star == math.inf
    assert result.worst_mean == pytest.approx(0.01)
    assert result.q_star.probs[0] == pytest.approx(1.0)


def test_tilt_degenerate_scores(two_point_prior: FinitePrior) -> None:
    result = tilt_worst_mean(two_point_prior, np.array([2.0, 2.0]), 0.5)

    assert result.degenerate
    assert result.worst_mean == 2.0

    with pytest.raises(DrbcDegenerateScoresException):
        tilt_worst_mean(two_point_prior, np.array([2.0, 2.0]), 0.5, strict=True)


def test_tilt_invalid(two_point_prior: FinitePrior) -> None:
    with pytest.raises(DrbcInvalidDataException, match="scores"):
        tilt_worst_mean(two_point_prior, np.zeros(3), 0.1)

    with pytest.raises(DrbcInvalidDataException, match="charge every atom"):
        tilt_worst_mean(two_point_prior.with_probs(np.array([1.0, 0.0])), np.array([0.0, 1.0]), 0.1)


def test_tilt_monotone_in_radius(h4_prior: FinitePrior) -> None:
    means = [
        tilt_worst_mean(h4_prior, h4_prior.values, delta).worst_mean
        for delta in (0.0, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0)
    ]

    assert all(later <= earlier + 1e-12 for earlier, later in zip(means, means[1:]))


def test_tilt_stays_in_ball() -> None:
    rng = spawn_rng(1)

    for _ in range(200):
        size = int(rng.integers(2, 11))
        p = FinitePrior(values=np.arange(size, dtype=np.float64), probs=rng.dirichlet(np.ones(size)))
        delta = math.exp(rng.uniform(math.log(1e-3), math.log(2.0)))
        result = tilt_worst_mean(p, rng.uniform(-5.0, 5.0, size), delta)
        assert kl_finite(result.q_star, p) <= delta + 1e-8
        assert result.saturated or abs(result.kl - delta) <= TILT_KL_TOL * max(1.0, delta)


def test_tilt_vector_atoms() -> None:
    prior = FinitePrior(values=[[0.1, 0.2], [0.3, 0.4]], probs=[0.5, 0.5])

    result = tilt_worst_mean(prior, atom_scores(prior), 10.0)

    assert result.worst_values == pytest.approx([0.1, 0.2])


def test_primal_inner_inf_one_atom() -> None:
    assert primal_inner_inf(FinitePrior.point_mass(0.3), np.array([1.5]), 0.7) == 1.5


def test_primal_inner_inf_translation(h4_prior: FinitePrior) -> None:
    scores = np.array([0.3, -1.0, 2.0, 0.5, 0.0])

    base = primal_inner_inf(h4_prior, scores, 0.2)

    assert primal_inner_inf(h4_prior, scores + 3.0, 0.2) == pytest.approx(base + 3.0, abs=1e-5)


def test_primal_inner_inf_matches_tilting() -> None:
    rng = spawn_rng(5)

    for _ in range(50):
        size = int(rng.integers(2, 11))
        p = FinitePrior(values=np.arange(size, dtype=np.float64), probs=rng.dirichlet(np.ones(size)))
        scores = rng.uniform(-5.0, 5.0, size)
        delta = math.exp(rng.uniform(math.log(1e-3), math.log(2.0)))

        tilted = tilt_worst_mean(p, scores, delta, Sense.MIN).worst_mean

        assert primal_inner_inf(p, scores, delta) == pytest.approx(tilted, abs=1e-4)


def test_primal_inner_inf_uncharged_atom() -> None:
    p = FinitePrior(values=[0.0, 1.0, 2.0], probs=[0.5, 0.5, 0.0])

    value = primal_inner_inf(p, np.array([1.0, 2.0, -10.0]), 0.1)

    assert value > 1.0
    assert value < 1.5


def test_cressie_read_phi() -> None:
    assert cressie_read_phi(np.array([1.0]), 2.0).tolist() == [0.0]
    assert cressie_read_phi(np.array([3.0]), 2.0) == pytest.approx([2.0])


def test_chi_square_primal(two_point_prior: FinitePrior) -> None:
    radius = RadiusSpec(0.1, DivergenceKind.CRESSIE_READ, k=2.0)

    value = divergence_primal_inf(two_point_prior, np.array([0.0, 1.0]), radius)

    assert value == pytest.approx(0.5 - math.sqrt(0.05), abs=1e-4)


def test_divergence_primal_inf_kl(two_point_prior: FinitePrior) -> None:
    scores = np.array([0.0, 1.0])

    assert divergence_primal_inf(two_point_prior, scores, RadiusSpec(0.1)) == pytest.approx(
        primal_inner_inf(two_point_prior, scores, 0.1)
    )
    assert divergence_primal_inf(
        two_point_prior, scores, RadiusSpec(0.0, DivergenceKind.CRESSIE_READ)
    ) == pytest.approx(0.5)
