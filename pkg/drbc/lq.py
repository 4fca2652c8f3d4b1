"""Linear-quadratic control under an unknown drift parameter."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from drbc.const import (
    DEFAULT_EXPLORATION_SCALE,
    DEFAULT_U_MAX,
    EXPLODED_ROLLOUT_REWARD,
    RICCATI_BLOWUP_THRESHOLD,
)
from drbc.exceptions import (
    DrbcInvalidDataException,
    DrbcRiccatiBlowupException,
    DrbcSingularInformationException,
)
from drbc.models import (
    BeliefFeatures,
    FloatArray,
    GaussianPrior,
    LqModel,
    LqPolicy,
    LqTrajectory,
    Prior,
    TimeGrid,
)
from drbc.priors import draw_prior
from drbc.sde import simulate_lq_batch, spawn_rng

__all__ = [
    "RiccatiSolution",
    "LqLearnConfig",
    "LqLearnResult",
    "LqInnerSimulator",
    "make_benchmark_model",
    "riccati_solve",
    "feedback_gain",
    "oracle_controller",
    "exploration_policy",
    "gls_estimate",
    "plugin_controller",
    "lq_expected_cost",
    "lq_reward",
    "drbc_lq_learn",
]

_LOGGER = logging.getLogger(__name__)

_INFORMATION_COND_LIMIT = 1e12
_GRADIENT_CLIP = 10.0


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Riccati values and gains on the grid nodes.

    Attributes:
        values(FloatArray): P(t_j) of shape (steps + 1, d, d).
        gains(FloatArray): K(t_j) of shape (steps + 1, k, d).
    """

    values: FloatArray
    gains: FloatArray

    def policy(self, u_max: float = DEFAULT_U_MAX) -> LqPolicy:
        """Feedback policy using the gain at the left end of every step."""
        return LqPolicy(gains=self.gains[:-1], u_max=u_max)


def make_benchmark_model(
    d: int = 10,
    k: int = 5,
    m: int = 10,
    T: float = 2.0,
    steps: int = 100,
    seed: int = 12345,
) -> LqModel:
    """Build the tridiagonal benchmark model with random dense drift directions.

    A0 has -0.6 on the diagonal, 0.15 above and -0.1 below it. Each direction is
    0.2 D_j + 0.05 O_j where the random diagonal D_j and the random off-diagonal
    O_j both have unit Frobenius norm.
    """
    if not 1 <= k <= d or m < 0:
        raise DrbcInvalidDataException(f"Invalid dimensions d={d}, k={k}, m={m}")

    A0 = -0.6 * np.eye(d) + 0.15 * np.eye(d, k=1) - 0.1 * np.eye(d, k=-1)

    rng = spawn_rng(seed)
    A_list = np.zeros((m, d, d))
    off_mask = 1.0 - np.eye(d)
    for j in range(m):
        diagonal = np.diag(rng.standard_normal(d))
        diagonal /= np.linalg.norm(diagonal)
        off_diagonal = rng.standard_normal((d, d)) * off_mask
        norm = np.linalg.norm(off_diagonal)
        if norm > 0.0:
            off_diagonal /= norm
        A_list[j] = 0.2 * diagonal + 0.05 * off_diagonal

    return LqModel(
        A0=A0,
        A_list=A_list,
        G=np.vstack([np.eye(k), np.zeros((d - k, k))]),
        Sigma=0.7 * np.eye(d),
        Q=3.0 * np.eye(d),
        Q_T=3.0 * np.eye(d),
        Rmat=np.eye(k),
        grid=TimeGrid(T=T, steps=steps),
    )


def feedback_gain(model: LqModel, P: FloatArray) -> FloatArray:
    """K = R^-1 G^T P for one value matrix (d, d) or a stack (n, d, d)."""
    return np.asarray(
        np.linalg.solve(model.Rmat, model.G.T @ np.asarray(P)), dtype=np.float64
    )


def riccati_solve(model: LqModel, A: FloatArray) -> RiccatiSolution:
    """Integrate the Riccati equation backward from P(T) = Q_T with RK4.

    Args:
        model (LqModel): Supplies G, the cost weights and the grid.
        A (FloatArray): The drift matrix to solve for.

    Returns:
        RiccatiSolution: P and K on every grid node.

    Raises:
        DrbcRiccatiBlowupException: If P leaves the finite range.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (model.d, model.d):
        raise DrbcInvalidDataException(f"A must be {model.d}x{model.d}")

    coupling = model.G @ np.linalg.solve(model.Rmat, model.G.T)

    def rhs(P: FloatArray) -> FloatArray:
        return np.asarray(
            model.Q + A.T @ P + P @ A - P @ coupling @ P, dtype=np.float64
        )

    steps = model.grid.steps
    h = model.grid.dt
    values = np.empty((steps + 1, model.d, model.d))
    P = np.array(model.Q_T, dtype=np.float64)
    values[steps] = P

    for j in range(steps - 1, -1, -1):
        k1 = rhs(P)
        k2 = rhs(P + 0.5 * h * k1)
        k3 = rhs(P + 0.5 * h * k2)
        k4 = rhs(P + h * k3)
        P = P + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(P)) or np.max(np.abs(P)) > RICCATI_BLOWUP_THRESHOLD:
            raise DrbcRiccatiBlowupException(
                f"Riccati solution exceeded {RICCATI_BLOWUP_THRESHOLD:g} at t={model.grid.points[j]:.6g}"
            )
        values[j] = P

    return RiccatiSolution(values=values, gains=feedback_gain(model, values))


def oracle_controller(model: LqModel, theta: FloatArray) -> LqPolicy:
    """Optimal feedback for a known parameter."""
    return riccati_solve(model, model.drift(theta)).policy(model.u_max)


def exploration_policy(
    model: LqModel,
    rng: np.random.Generator,
    scale: float = DEFAULT_EXPLORATION_SCALE,
) -> LqPolicy:
    """Constant random feedback with i.i.d. N(0, scale^2) gain entries."""
    gain = scale * rng.standard_normal((model.k, model.d))
    return LqPolicy(
        gains=np.broadcast_to(gain, (model.grid.steps, model.k, model.d)),
        u_max=model.u_max,
    )


def gls_estimate(
    traj: LqTrajectory | Sequence[LqTrajectory],
    model: LqModel,
    ridge: float = 0.0,
) -> BeliefFeatures:
    """Whitened least-squares estimate of theta from recorded trajectories.

    Residuals dX/dt - A0 X - G u are regressed on [A_1 X, ..., A_m X] after
    whitening with Sigma^-1; every step is weighted by dt, so the information
    matrix approximates the integral of Phi^T (Sigma Sigma^T)^-1 Phi.

    Raises:
        DrbcSingularInformationException: If the regularized normal matrix is numerically singular.
    """
    if ridge < 0.0:
        raise DrbcInvalidDataException(f"Ridge must be >= 0, got {ridge}")

    trajectories = [traj] if isinstance(traj, LqTrajectory) else list(traj)
    if not trajectories:
        raise DrbcInvalidDataException("Need at least one trajectory")
    m = model.m
    if m == 0:
        return BeliefFeatures(theta_hat=np.zeros(0), S_prec=np.zeros((0, 0)))

    information = np.zeros((m, m))
    score = np.zeros(m)
    try:
        whitening = np.linalg.inv(model.Sigma)
    except np.linalg.LinAlgError as ex:
        raise DrbcSingularInformationException("Sigma is not invertible") from ex

    for item in trajectories:
        dt = item.grid.dt
        states = item.states[:-1]
        velocity = np.diff(item.states, axis=0) / dt
        residual = velocity - states @ model.A0.T - item.controls @ model.G.T
        # features[n, :, i] = A_i x_n
        features = np.einsum("ijk,nk->nji", model.A_list, states)
        white_residual = residual @ whitening.T
        white_features = np.einsum("ab,nbi->nai", whitening, features)
        information += dt * np.einsum("nai,naj->ij", white_features, white_features)
        score += dt * np.einsum("nai,na->i", white_features, white_residual)

    normal = information + ridge * np.eye(m)
    if np.linalg.cond(normal) > _INFORMATION_COND_LIMIT:
        raise DrbcSingularInformationException(
            "Information matrix is numerically singular, add data or a ridge"
        )
    try:
        theta_hat = np.linalg.solve(normal, score)
    except np.linalg.LinAlgError as ex:
        raise DrbcSingularInformationException("Normal equations are singular") from ex

    information = 0.5 * (information + information.T)
    return BeliefFeatures(theta_hat=theta_hat, S_prec=information)


def plugin_controller(
    traj: LqTrajectory | Sequence[LqTrajectory],
    model: LqModel,
    ridge: float = 0.0,
) -> LqPolicy:
    """Certainty-equivalent feedback for the GLS estimate."""
    belief = gls_estimate(traj, model, ridge)
    return oracle_controller(model, belief.theta_hat)


def lq_expected_cost(
    model: LqModel,
    solution: RiccatiSolution,
    x0: FloatArray,
    x0_cov: FloatArray | None = None,
) -> float:
    """Expected cost x0^T P(0) x0 + tr(C P(0)) + int tr(Sigma Sigma^T P) dt.

    Exact for the optimal feedback of the drift the solution was computed for,
    started at mean `x0` with covariance `x0_cov`.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    P0 = solution.values[0]
    cost = float(x0 @ P0 @ x0)
    if x0_cov is not None:
        cost += float(np.trace(np.asarray(x0_cov) @ P0))

    noise = model.Sigma @ model.Sigma.T
    traces = np.einsum("ij,nji->n", noise, solution.values)
    return cost + float(trapezoid(traces, model.grid.points))


def lq_reward(traj: LqTrajectory) -> float:
    """Z = -(running + terminal cost)."""
    return -(traj.running_cost + traj.terminal_cost)


@dataclass(frozen=True)
class LqInnerSimulator:
    """Rewards of LQ rollouts under a fixed policy for a given theta.

    Each sample is the reward of one rollout started at X0 ~ N(0, x0_scale^2 I);
    exploded rollouts count as `EXPLODED_ROLLOUT_REWARD`.
    """

    model: LqModel
    policy: LqPolicy
    x0_scale: float = 1.0
    lower_bound: float | None = None

    def sample(
        self, b: FloatArray | float, count: int, rng: np.random.Generator
    ) -> FloatArray:
        """Simulate `count` rollouts under theta = `b`."""
        d = self.model.d
        increments = rng.standard_normal((count, self.model.grid.steps, d)) * math.sqrt(
            self.model.grid.dt
        )
        x0 = self.x0_scale * rng.standard_normal((count, d))
        batch = simulate_lq_batch(
            self.model,
            np.atleast_1d(np.asarray(b, dtype=np.float64)),
            self.policy,
            increments,
            x0,
            raise_on_explode=False,
        )
        return batch.rewards()


@dataclass(frozen=True)
class LqLearnConfig:
    """Settings of the robust LQ learner.

    Attributes:
        C_lam(float): The multiplier is C_lam / sqrt(delta).
        N_theta(int): Prior draws per step.
        B_traj(int): Rollouts per prior draw.
        S_in(int): Learning steps.
        eta(float): Base ascent gain.
        basis_size(int): Number of time polynomials (degrees 0 .. basis_size - 1).
        perturbation(float): Base perturbation size.
        x0_scale(float): Standard deviation of the initial states.
    """

    C_lam: float = 1.0
    N_theta: int = 32
    B_traj: int = 64
    S_in: int = 200
    eta: float = 0.01
    basis_size: int = 2
    perturbation: float = 0.1
    x0_scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.C_lam > 0.0 or not self.eta > 0.0 or not self.perturbation > 0.0:
            raise DrbcInvalidDataException("C_lam, eta and perturbation must be positive")
        if min(self.N_theta, self.B_traj, self.S_in, self.basis_size) < 1:
            raise DrbcInvalidDataException("Sample sizes and basis size must be >= 1")


@dataclass(frozen=True, eq=False)
class LqLearnResult:
    """Outcome of robust LQ learning.

    Attributes:
        policy(LqPolicy): The learned feedback.
        psi(FloatArray): The basis coefficients.
        lam(float): The fixed multiplier.
        objective_history(list[float]): Dual objective per step.
    """

    policy: LqPolicy
    psi: FloatArray
    lam: float
    objective_history: list[float] = field(default_factory=list)


def _prior_moments(prior: Prior, m: int) -> tuple[FloatArray, float]:
    if isinstance(prior, GaussianPrior):
        return np.full(m, prior.mean), 1.0 / prior.std**2

    values = prior.values.reshape(prior.size, -1)
    if values.shape[1] != m:
        raise DrbcInvalidDataException(f"Prior atoms must have dimension {m}")
    mean = prior.probs @ values
    variance = float(np.mean(prior.probs @ (values - mean) ** 2))
    return mean, (1.0 / variance if variance > 0.0 else math.inf)


def _gain_basis(
    model: LqModel, prior: Prior, belief: BeliefFeatures, basis_size: int
) -> FloatArray:
    prior_mean, precision = _prior_moments(prior, model.m)
    if math.isinf(precision):
        shrunk = prior_mean
    else:
        shrunk = belief.shrunk(prior_mean, precision)

    prior_gains = riccati_solve(model, model.drift(prior_mean)).gains[:-1]
    belief_gains = riccati_solve(model, model.drift(shrunk)).gains[:-1]

    steps = model.grid.steps
    t_norm = np.arange(steps) / max(steps - 1, 1)
    basis = []
    for power in range(basis_size):
        weight = (t_norm**power)[:, np.newaxis, np.newaxis]
        basis.append(weight * prior_gains)
        basis.append(weight * (belief_gains - prior_gains))
    return np.stack(basis)


def _sample_thetas(prior: Prior, rng: np.random.Generator, n: int, m: int) -> FloatArray:
    if isinstance(prior, GaussianPrior) and prior.dim is None:
        return prior.mean + prior.std * rng.standard_normal((n, m))
    return np.asarray(draw_prior(prior, rng, n), dtype=np.float64).reshape(n, m)


def drbc_lq_learn(
    model: LqModel,
    prior: Prior,
    delta: float,
    config: LqLearnConfig,
    belief: BeliefFeatures,
    seed: int,
) -> LqLearnResult:
    """Learn feedback gains against the fixed-multiplier KL dual objective.

    The gains are K_psi(t) = sum_j psi_j phi_j(t), where the basis crosses time
    powers with the Riccati gain at the prior mean and the shift towards the
    gain at the shrunk belief. Every step draws prior parameters, averages
    rollout rewards per parameter on common noise, and moves psi along a
    two-point simultaneous-perturbation estimate of the gradient of
    -lam delta - lam log mean exp(-Z_i/lam). The belief stays frozen.

    Args:
        model (LqModel): The model with unknown theta.
        prior (Prior): The baseline prior on theta.
        delta (float): The KL radius.
        config (LqLearnConfig): Learner settings.
        belief (BeliefFeatures): The frozen estimate and information.
        seed (int): The master seed.

    Returns:
        LqLearnResult: The learned policy with its coefficients and objective trace.
    """
    if not delta > 0.0:
        raise DrbcInvalidDataException(f"Radius must be positive, got {delta}")
    if belief.theta_hat.shape != (model.m,):
        raise DrbcInvalidDataException("Belief does not match the model")

    lam = config.C_lam / math.sqrt(delta)
    basis = _gain_basis(model, prior, belief, config.basis_size)
    psi = np.zeros(basis.shape[0])
    psi[:2] = 1.0

    n_paths = config.N_theta * config.B_traj
    steps, d = model.grid.steps, model.d
    sqrt_dt = math.sqrt(model.grid.dt)

    def objective(
        coefficients: FloatArray, thetas: FloatArray, noise: FloatArray, x0: FloatArray
    ) -> float:
        policy = LqPolicy(
            gains=np.tensordot(coefficients, basis, axes=1), u_max=model.u_max
        )
        batch = simulate_lq_batch(
            model, thetas, policy, noise, x0, raise_on_explode=False
        )
        if np.any(batch.exploded):
            _LOGGER.warning("%d rollouts exploded", int(batch.exploded.sum()))
        rewards = batch.rewards(EXPLODED_ROLLOUT_REWARD)
        z = rewards.reshape(config.N_theta, config.B_traj).mean(axis=1)
        log_mean = float(logsumexp(-z / lam)) - math.log(config.N_theta)
        return -lam * delta - lam * log_mean

    history: list[float] = []
    for step in range(config.S_in):
        rng = spawn_rng(seed, step)
        thetas = np.repeat(
            _sample_thetas(prior, rng, config.N_theta, model.m), config.B_traj, axis=0
        )
        noise = rng.standard_normal((n_paths, steps, d)) * sqrt_dt
        x0 = config.x0_scale * rng.standard_normal((n_paths, d))

        direction = rng.choice([-1.0, 1.0], size=psi.shape[0])
        c_k = config.perturbation / (step + 1) ** 0.101
        a_k = config.eta / (step + 1) ** 0.602

        upper = objective(psi + c_k * direction, thetas, noise, x0)
        lower = objective(psi - c_k * direction, thetas, noise, x0)
        gradient = (upper - lower) / (2.0 * c_k) * direction
        norm = float(np.linalg.norm(gradient))
        if norm > _GRADIENT_CLIP:
            gradient *= _GRADIENT_CLIP / norm

        psi = psi + a_k * gradient
        history.append(0.5 * (upper + lower))
        _LOGGER.debug("step %d: objective=%.6g |grad|=%.3g", step, history[-1], norm)

    policy = LqPolicy(gains=np.tensordot(psi, basis, axes=1), u_max=model.u_max)
    return LqLearnResult(policy=policy, psi=psi, lam=lam, objective_history=history)
