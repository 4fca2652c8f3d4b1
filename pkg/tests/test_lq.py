import math

import numpy as np
import pytest

from drbc.exceptions import (
    DrbcInvalidDataException,
    DrbcRiccatiBlowupException,
    DrbcSingularInformationException,
)
from drbc.lq import (
    LqInnerSimulator,
    LqLearnConfig,
    drbc_lq_learn,
    exploration_policy,
    gls_estimate,
    lq_expected_cost,
    lq_reward,
    make_benchmark_model,
    oracle_controller,
    plugin_controller,
    riccati_solve,
)
from drbc.models import (
    BeliefFeatures,
    FinitePrior,
    GaussianPrior,
    LqModel,
    LqPolicy,
    TimeGrid,
)
from drbc.sde import make_noise, simulate_lq, simulate_lq_batch, spawn_rng


def _estimation_model(steps: int = 40_000, T: float = 400.0) -> LqModel:
    return LqModel(
        A0=-np.eye(1),
        A_list=np.ones((1, 1, 1)),
        G=np.eye(1),
        Sigma=0.5 * np.eye(1),
        Q=np.eye(1),
        Q_T=np.zeros((1, 1)),
        Rmat=np.eye(1),
        grid=TimeGrid(T=T, steps=steps),
    )


def _zero_policy(model: LqModel) -> LqPolicy:
    return LqPolicy(gains=np.zeros((model.grid.steps, model.k, model.d)))


def test_benchmark_model() -> None:
    model = make_benchmark_model(d=4, k=2, m=3, seed=7)

    assert (model.d, model.k, model.m) == (4, 2, 3)
    assert np.allclose(np.diag(model.A0), -0.6)
    assert model.A0[0, 1] == pytest.approx(0.15)
    assert model.A0[1, 0] == pytest.approx(-0.1)
    assert model.G[:2].tolist() == np.eye(2).tolist()
    assert not np.any(model.G[2:])
    for direction in model.A_list:
        assert np.linalg.norm(direction) == pytest.approx(math.sqrt(0.04 + 0.0025))

    again = make_benchmark_model(d=4, k=2, m=3, seed=7)
    assert again.A_list.tolist() == model.A_list.tolist()


def test_benchmark_model_invalid() -> None:
    with pytest.raises(DrbcInvalidDataException):
        make_benchmark_model(d=2, k=3)


def test_riccati_scalar_closed_form(scalar_lq_model: LqModel) -> None:
    solution = riccati_solve(scalar_lq_model, scalar_lq_model.A0)

    assert solution.values.shape == (201, 1, 1)
    assert solution.values[-1, 0, 0] == 0.0
    assert solution.values[0, 0, 0] == pytest.approx(math.tanh(2.0), rel=1e-6)
    assert solution.gains[100, 0, 0] == pytest.approx(math.tanh(1.0), rel=1e-6)


def test_riccati_wrong_shape(scalar_lq_model: LqModel) -> None:
    with pytest.raises(DrbcInvalidDataException):
        riccati_solve(scalar_lq_model, np.eye(2))


def test_riccati_blowup() -> None:
    model = LqModel(
        A0=np.zeros((1, 1)),
        A_list=np.zeros((0, 1, 1)),
        G=np.zeros((1, 1)),
        Sigma=np.eye(1),
        Q=np.eye(1),
        Q_T=np.eye(1),
        Rmat=np.eye(1),
        grid=TimeGrid(T=2.0, steps=200),
    )

    with pytest.raises(DrbcRiccatiBlowupException):
        riccati_solve(model, 20.0 * np.eye(1))


def test_expected_cost_closed_form(scalar_lq_model: LqModel) -> None:
    solution = riccati_solve(scalar_lq_model, scalar_lq_model.A0)

    cost = lq_expected_cost(scalar_lq_model, solution, np.ones(1))
    with_spread = lq_expected_cost(scalar_lq_model, solution, np.ones(1), np.eye(1))

    expected = math.tanh(2.0) + 0.25 * math.log(math.cosh(2.0))
    assert cost == pytest.approx(expected, rel=1e-4)
    assert with_spread == pytest.approx(expected + math.tanh(2.0), rel=1e-4)


def test_oracle_cost_matches_simulation(scalar_lq_model: LqModel) -> None:
    policy = oracle_controller(scalar_lq_model, np.zeros(0))
    solution = riccati_solve(scalar_lq_model, scalar_lq_model.A0)
    grid = scalar_lq_model.grid
    increments = spawn_rng(3).standard_normal((4000, grid.steps, 1)) * math.sqrt(grid.dt)

    batch = simulate_lq_batch(scalar_lq_model, np.zeros(0), policy, increments, np.ones(1))

    simulated = float(np.mean(batch.running_cost + batch.terminal_cost))
    assert simulated == pytest.approx(
        lq_expected_cost(scalar_lq_model, solution, np.ones(1)), rel=0.05
    )


def test_exploration_policy(scalar_lq_model: LqModel) -> None:
    policy = exploration_policy(scalar_lq_model, spawn_rng(1), scale=0.3)

    assert policy.gains.shape == (200, 1, 1)
    assert np.all(policy.gains == policy.gains[0])


def test_gls_recovers_drift_parameter() -> None:
    model = _estimation_model()
    traj = simulate_lq(
        model, np.array([0.5]), _zero_policy(model), make_noise(11, model.grid, 1), np.zeros(1)
    )

    belief = gls_estimate(traj, model)

    assert belief.theta_hat[0] == pytest.approx(0.5, abs=0.25)
    assert belief.S_prec[0, 0] > 100.0


def test_gls_pools_trajectories() -> None:
    model = _estimation_model(steps=2000, T=20.0)
    policy = _zero_policy(model)
    trajectories = [
        simulate_lq(model, np.array([0.5]), policy, make_noise(seed, model.grid, 1), np.ones(1))
        for seed in range(2)
    ]

    pooled = gls_estimate(trajectories, model)
    first = gls_estimate(trajectories[0], model)
    second = gls_estimate(trajectories[1], model)

    assert pooled.S_prec[0, 0] == pytest.approx(first.S_prec[0, 0] + second.S_prec[0, 0])


def test_gls_ridge_shrinks() -> None:
    model = _estimation_model(steps=2000, T=20.0)
    traj = simulate_lq(
        model, np.array([0.5]), _zero_policy(model), make_noise(4, model.grid, 1), np.ones(1)
    )

    plain = gls_estimate(traj, model)
    ridged = gls_estimate(traj, model, ridge=1e6)

    assert abs(ridged.theta_hat[0]) < abs(plain.theta_hat[0])


def test_gls_singular_information() -> None:
    model = LqModel(
        A0=-np.eye(1),
        A_list=np.zeros((1, 1, 1)),
        G=np.eye(1),
        Sigma=0.5 * np.eye(1),
        Q=np.eye(1),
        Q_T=np.zeros((1, 1)),
        Rmat=np.eye(1),
        grid=TimeGrid(T=1.0, steps=50),
    )
    traj = simulate_lq(
        model, np.array([0.0]), _zero_policy(model), make_noise(0, model.grid, 1), np.ones(1)
    )

    with pytest.raises(DrbcSingularInformationException):
        gls_estimate(traj, model)


def test_gls_invalid_input() -> None:
    model = _estimation_model(steps=10, T=1.0)

    with pytest.raises(DrbcInvalidDataException, match="trajectory"):
        gls_estimate([], model)

    with pytest.raises(DrbcInvalidDataException, match="Ridge"):
        gls_estimate([], model, ridge=-1.0)


def test_plugin_controller_shape() -> None:
    model = _estimation_model(steps=2000, T=20.0)
    traj = simulate_lq(
        model, np.array([0.5]), _zero_policy(model), make_noise(5, model.grid, 1), np.ones(1)
    )

    policy = plugin_controller(traj, model)

    assert policy.gains.shape == (2000, 1, 1)
    assert np.all(policy.gains > 0.0)


def test_lq_reward(scalar_lq_model: LqModel) -> None:
    traj = simulate_lq(
        scalar_lq_model,
        np.zeros(0),
        _zero_policy(scalar_lq_model),
        make_noise(2, scalar_lq_model.grid, 1),
        np.ones(1),
    )

    assert lq_reward(traj) == -traj.total_cost
    assert lq_reward(traj) < 0.0


def test_lq_inner_simulator(scalar_lq_model: LqModel) -> None:
    sim = LqInnerSimulator(
        model=scalar_lq_model, policy=oracle_controller(scalar_lq_model, np.zeros(0))
    )

    rewards = sim.sample(np.zeros(0), 8, spawn_rng(0))

    assert rewards.shape == (8,)
    assert np.all(rewards <= 0.0)


def test_learn_config_validation() -> None:
    with pytest.raises(DrbcInvalidDataException):
        LqLearnConfig(eta=0.0)

    with pytest.raises(DrbcInvalidDataException):
        LqLearnConfig(N_theta=0)


def test_drbc_lq_learn_small_run() -> None:
    model = make_benchmark_model(d=2, k=1, m=2, T=0.5, steps=20, seed=3)
    prior = GaussianPrior(mean=0.0, std=0.1, dim=2)
    belief = BeliefFeatures(theta_hat=np.zeros(2), S_prec=np.eye(2))
    config = LqLearnConfig(N_theta=4, B_traj=4, S_in=3)

    result = drbc_lq_learn(model, prior, 0.25, config, belief, seed=1)
    again = drbc_lq_learn(model, prior, 0.25, config, belief, seed=1)

    assert result.lam == pytest.approx(2.0)
    assert len(result.objective_history) == 3
    assert result.policy.gains.shape == (20, 1, 2)
    assert result.psi.shape == (4,)
    assert again.psi.tolist() == result.psi.tolist()


def test_drbc_lq_learn_invalid() -> None:
    model = make_benchmark_model(d=2, k=1, m=2, T=0.5, steps=20)
    prior = GaussianPrior(mean=0.0, std=0.1, dim=2)
    config = LqLearnConfig(N_theta=2, B_traj=2, S_in=1)

    with pytest.raises(DrbcInvalidDataException, match="Radius"):
        drbc_lq_learn(
            model, prior, 0.0, config, BeliefFeatures(np.zeros(2), np.eye(2)), seed=0
        )

    with pytest.raises(DrbcInvalidDataException, match="Belief"):
        drbc_lq_learn(
            model, prior, 0.1, config, BeliefFeatures(np.zeros(3), np.eye(3)), seed=0
        )


def test_gls_error_shrinks_with_horizon() -> None:
    theta = np.array([0.5])

    def mse(T: float, steps: int, offset: int) -> float:
        model = _estimation_model(steps=steps, T=T)
        policy = _zero_policy(model)
        errors = [
            gls_estimate(
                simulate_lq(
                    model, theta, policy, make_noise(offset + seed, model.grid, 1), np.zeros(1)
                ),
                model,
            ).theta_hat[0]
            - 0.5
            for seed in range(30)
        ]
        return float(np.mean(np.square(errors)))

    assert mse(320.0, 6400, 1000) < 0.25 * mse(20.0, 400, 0)


def test_misspecified_gain_costs_more() -> None:
    model = _estimation_model(steps=200, T=2.0)
    theta = np.array([0.5])
    increments = spawn_rng(6).standard_normal((4000, 200, 1)) * math.sqrt(model.grid.dt)
    x0 = np.ones((4000, 1))

    def mean_cost(policy: LqPolicy) -> float:
        batch = simulate_lq_batch(model, theta, policy, increments, x0)
        return float(np.mean(batch.running_cost + batch.terminal_cost))

    oracle = mean_cost(oracle_controller(model, theta))
    misspecified = mean_cost(oracle_controller(model, np.array([-3.0])))

    assert misspecified > oracle


def test_drbc_lq_learn_point_mass_prior_keeps_oracle_gains() -> None:
    model = _estimation_model(steps=50, T=1.0)
    prior = FinitePrior.point_mass(np.array([0.5]))
    belief = BeliefFeatures(theta_hat=np.zeros(1), S_prec=np.eye(1))
    config = LqLearnConfig(N_theta=4, B_traj=4, S_in=3, eta=1e-6)

    result = drbc_lq_learn(model, prior, 0.1, config, belief, seed=2)

    oracle = oracle_controller(model, np.array([0.5]))
    assert np.allclose(result.policy.gains, oracle.gains, atol=1e-4)


def test_drbc_lq_learn_flat_without_state_cost() -> None:
    model = LqModel(
        A0=-np.eye(1),
        A_list=np.ones((1, 1, 1)),
        G=np.eye(1),
        Sigma=0.5 * np.eye(1),
        Q=np.zeros((1, 1)),
        Q_T=np.zeros((1, 1)),
        Rmat=np.eye(1),
        grid=TimeGrid(T=1.0, steps=20),
    )
    prior = GaussianPrior(mean=0.0, std=0.1, dim=1)
    belief = BeliefFeatures(theta_hat=np.zeros(1), S_prec=np.eye(1))

    result = drbc_lq_learn(
        model, prior, 0.25, LqLearnConfig(N_theta=2, B_traj=2, S_in=3), belief, seed=0
    )

    assert not np.any(result.policy.gains)
    assert result.objective_history == pytest.approx([-result.lam * 0.25] * 3)
