import math

import numpy as np
import pytest

from drbc.const import DivergenceKind
from drbc.exceptions import DrbcInvalidDataException
from drbc.models import (
    AscentSchedule,
    BeliefFeatures,
    DualEvalResult,
    FinitePrior,
    GaussianPrior,
    LqModel,
    LqPolicy,
    MertonMarket,
    NoiseBlock,
    QuadratureRule,
    RadiusSpec,
    RmlmcParams,
    TimeGrid,
    prior_from_dict,
)


def test_time_grid_points() -> None:
    grid = TimeGrid(T=2.0, steps=4)

    assert grid.dt == 0.5
    assert grid.points.tolist() == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert grid.refined(3).steps == 12


def test_time_grid_invalid() -> None:
    with pytest.raises(DrbcInvalidDataException):
        TimeGrid(T=1.0, steps=0)

    with pytest.raises(DrbcInvalidDataException):
        TimeGrid(T=0.0, steps=10)


def test_finite_prior_is_read_only() -> None:
    prior = FinitePrior(values=[0.1, 0.2], probs=[0.25, 0.75])

    with pytest.raises(ValueError):
        prior.probs[0] = 0.5

    assert prior.size == 2
    assert float(prior.mean) == pytest.approx(0.175)


def test_finite_prior_invalid() -> None:
    with pytest.raises(DrbcInvalidDataException, match="sum to 1"):
        FinitePrior(values=[0.1, 0.2], probs=[0.5, 0.6])

    with pytest.raises(DrbcInvalidDataException, match="non-negative"):
        FinitePrior(values=[0.1, 0.2], probs=[1.5, -0.5])

    with pytest.raises(DrbcInvalidDataException, match="distinct"):
        FinitePrior(values=[0.1, 0.1], probs=[0.5, 0.5])

    with pytest.raises(DrbcInvalidDataException):
        FinitePrior(values=[], probs=[])


def test_finite_prior_zero_mass_atoms() -> None:
    prior = FinitePrior(values=[0.1, 0.2, 0.3], probs=[0.0, 0.5, 0.5])

    assert not prior.has_full_support
    assert prior.same_atoms(prior.with_probs(np.array([0.2, 0.3, 0.5])))


def test_point_mass() -> None:
    prior = FinitePrior.point_mass(0.3)

    assert prior.values.tolist() == [0.3]
    assert prior.probs.tolist() == [1.0]


def test_finite_prior_json() -> None:
    prior = FinitePrior(values=[0.01, 0.46], probs=[0.3, 0.7])

    assert prior.to_dict() == {"atoms": [{"b": 0.01, "p": 0.3}, {"b": 0.46, "p": 0.7}]}

    decoded = FinitePrior.from_json(prior.to_json())
    assert decoded.values.tolist() == [0.01, 0.46]
    assert decoded.probs.tolist() == [0.3, 0.7]


def test_vector_atoms_json() -> None:
    prior = prior_from_dict(
        {"atoms": [{"b": [0.1, 0.2], "p": 0.5}, {"b": [0.3, 0.4], "p": 0.5}]}
    )

    assert isinstance(prior, FinitePrior)
    assert prior.values.shape == (2, 2)


def test_prior_from_dict_gaussian() -> None:
    prior = prior_from_dict({"gaussian": {"mu0": 0.1, "sigma0": 2.0}})

    assert prior == GaussianPrior(mean=0.1, std=2.0)
    assert prior.to_dict() == {"gaussian": {"mu0": 0.1, "sigma0": 2.0}}


def test_prior_from_dict_invalid() -> None:
    with pytest.raises(DrbcInvalidDataException, match="'atoms' or 'gaussian'"):
        prior_from_dict({"uniform": {}})

    with pytest.raises(DrbcInvalidDataException, match="Missing key"):
        prior_from_dict({"gaussian": {"mu0": 0.1}})

    with pytest.raises(DrbcInvalidDataException, match="keys 'b' and 'p'"):
        prior_from_dict({"atoms": [{"b": 0.1}]})


def test_from_json_invalid() -> None:
    with pytest.raises(DrbcInvalidDataException, match="Invalid JSON"):
        FinitePrior.from_json("{")

    with pytest.raises(DrbcInvalidDataException, match="must be an object"):
        FinitePrior.from_json("[]")


def test_gaussian_prior_invalid() -> None:
    with pytest.raises(DrbcInvalidDataException):
        GaussianPrior(mean=0.0, std=0.0)

    with pytest.raises(DrbcInvalidDataException):
        GaussianPrior(mean=0.0, std=1.0, dim=0)


def test_radius_spec() -> None:
    assert RadiusSpec(0.1).divergence is DivergenceKind.KL

    with pytest.raises(DrbcInvalidDataException):
        RadiusSpec(-0.1)

    with pytest.raises(DrbcInvalidDataException):
        RadiusSpec(0.1, DivergenceKind.CRESSIE_READ, k=1.0)


def test_rmlmc_params_level_pmf() -> None:
    params = RmlmcParams(R=0.65, n0=3)

    assert params.level_pmf(2) == 0.0
    assert params.level_pmf(3) == pytest.approx(0.65)
    assert params.level_pmf(4) == pytest.approx(0.2275)
    assert sum(params.level_pmf(level) for level in range(3, 200)) == pytest.approx(1.0)


@pytest.mark.parametrize("ratio", [0.5, 0.75, 0.9])
def test_rmlmc_params_invalid_ratio(ratio: float) -> None:
    with pytest.raises(DrbcInvalidDataException, match="1/2, 3/4"):
        RmlmcParams(R=ratio)


def test_ascent_schedule() -> None:
    schedule = AscentSchedule(step0=0.1, decay=10.0)

    assert schedule.step(0) == pytest.approx(0.1)
    assert schedule.step(10) == pytest.approx(0.05)

    with pytest.raises(DrbcInvalidDataException):
        AscentSchedule(lambda0=0.0)

    with pytest.raises(DrbcInvalidDataException):
        AscentSchedule(max_iters=0)


def test_dual_eval_result_json() -> None:
    result = DualEvalResult(
        robust_value=0.28,
        lambda_star=1.5,
        std_err=0.01,
        n_outer=100,
        iterations=12,
        m_hat=0.8,
        lambda_upper_bound=5.0,
    )

    assert DualEvalResult.from_json(result.to_json()) == result

    with pytest.raises(DrbcInvalidDataException, match="Missing key"):
        DualEvalResult.from_json('{"robust_value": 1.0}')


def test_merton_market_utility(market: MertonMarket) -> None:
    utility = market.utility(np.array([4.0, 0.0, -1.0]))

    assert utility.tolist() == [4.0, 0.0, 0.0]


def test_merton_market_invalid() -> None:
    with pytest.raises(DrbcInvalidDataException, match="alpha"):
        MertonMarket(r=0.05, sigma=0.4, alpha=1.0)

    with pytest.raises(DrbcInvalidDataException, match="Volatility"):
        MertonMarket(r=0.05, sigma=0.0)


def test_merton_market_json(market: MertonMarket) -> None:
    assert MertonMarket.from_json(market.to_json()) == market


def test_quadrature_moments(quad: QuadratureRule) -> None:
    assert float(np.sum(quad.weights)) == pytest.approx(1.0)
    assert quad.expect(lambda x: x, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert quad.expect(lambda x: x**2, 2.0) == pytest.approx(2.0)
    assert quad.expect(np.exp, 0.5) == pytest.approx(math.exp(0.25))


def test_quadrature_invalid() -> None:
    with pytest.raises(DrbcInvalidDataException):
        QuadratureRule.gauss_hermite(0)


def test_lq_model_drift(scalar_lq_model: LqModel) -> None:
    model = LqModel(
        A0=-np.eye(2),
        A_list=np.stack([np.eye(2), np.ones((2, 2))]),
        G=np.eye(2)[:, :1],
        Sigma=np.eye(2),
        Q=np.eye(2),
        Q_T=np.eye(2),
        Rmat=np.eye(1),
        grid=TimeGrid(T=1.0, steps=10),
    )

    assert (model.d, model.k, model.m) == (2, 1, 2)
    assert model.drift(np.array([1.0, 0.5])).tolist() == [[0.5, 0.5], [0.5, 0.5]]
    assert model.drift(np.zeros((3, 2))).shape == (3, 2, 2)
    assert scalar_lq_model.m == 0

    with pytest.raises(DrbcInvalidDataException, match="trailing dimension"):
        model.drift(np.zeros(3))


def test_lq_model_invalid_costs() -> None:
    base = dict(
        A0=np.zeros((2, 2)),
        A_list=np.zeros((0, 2, 2)),
        G=np.eye(2),
        Sigma=np.eye(2),
        Q=np.eye(2),
        Q_T=np.eye(2),
        Rmat=np.eye(2),
        grid=TimeGrid(T=1.0, steps=10),
    )

    with pytest.raises(DrbcInvalidDataException, match="symmetric"):
        LqModel(**{**base, "Q": np.array([[1.0, 1.0], [0.0, 1.0]])})

    with pytest.raises(DrbcInvalidDataException, match="positive definite"):
        LqModel(**{**base, "Rmat": np.diag([1.0, 0.0])})

    with pytest.raises(DrbcInvalidDataException, match="semidefinite"):
        LqModel(**{**base, "Q_T": -np.eye(2)})


def test_lq_model_json(scalar_lq_model: LqModel) -> None:
    decoded = LqModel.from_json(scalar_lq_model.to_json())

    assert decoded.to_dict() == scalar_lq_model.to_dict()


def test_lq_policy_clips() -> None:
    policy = LqPolicy(gains=np.full((3, 1, 1), 10.0), u_max=5.0)

    controls = policy.control(0, np.array([[1.0], [-0.1], [-2.0]]))

    assert controls.tolist() == [[-5.0], [1.0], [5.0]]
    assert policy.steps == 3


def test_noise_block_shape() -> None:
    grid = TimeGrid(T=1.0, steps=4)

    with pytest.raises(DrbcInvalidDataException, match="shape"):
        NoiseBlock(grid=grid, increments=np.zeros((3, 1)), seed=0)

    noise = NoiseBlock(grid=grid, increments=np.ones((4, 1)), seed=0)
    assert noise.brownian_path[:, 0].tolist() == [0.0, 1.0, 2.0, 3.0, 4.0]


def test_belief_shrinkage() -> None:
    belief = BeliefFeatures(theta_hat=np.array([1.0, -1.0]), S_prec=2.0 * np.eye(2))

    assert belief.shrunk(np.zeros(2), 0.0) == pytest.approx([1.0, -1.0])
    assert belief.shrunk(np.zeros(2), 2.0) == pytest.approx([0.5, -0.5])

    with pytest.raises(DrbcInvalidDataException):
        belief.shrunk(np.zeros(2), -1.0)
