"""Priors on the latent parameter, KL arithmetic and worst-case tilting."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import logsumexp, rel_entr

from drbc.const import TILT_KL_TOL, TILT_MAX_ITER, DivergenceKind, Sense
from drbc.exceptions import (
    DrbcDegenerateScoresException,
    DrbcInvalidDataException,
    DrbcSupportMismatchException,
)
from drbc.models import FinitePrior, FloatArray, GaussianPrior, Prior, RadiusSpec
from drbc.sde import spawn_rng

__all__ = [
    "TiltResult",
    "atom_scores",
    "sample_prior",
    "draw_prior",
    "kl_finite",
    "tilt_worst_mean",
    "primal_inner_inf",
    "cressie_read_phi",
    "divergence_primal_inf",
]

_LOGGER = logging.getLogger(__name__)

_Q_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class TiltResult:
    """Worst-case distribution of a linear functional over a KL ball.

    Attributes:
        q_star(FinitePrior): The extremal distribution on the prior's atoms.
        alpha_star(float): The tilting exponent, infinite when the ball is saturated.
        worst_mean(float): The extremal mean of the scores.
        worst_values(FloatArray): The extremal mean of the atom values.
        kl(float): KL(q_star || p).
        degenerate(bool): Whether all scores were equal.
        saturated(bool): Whether the radius exceeds the KL of the extremal point mass.
    """

    q_star: FinitePrior
    alpha_star: float
    worst_mean: float
    worst_values: FloatArray
    kl: float
    degenerate: bool = False
    saturated: bool = False


def atom_scores(prior: FinitePrior) -> FloatArray:
    """Scalar score per atom: the value itself, or the sum of a vector value."""
    if prior.values.ndim == 1:
        return np.asarray(prior.values, dtype=np.float64)
    return np.asarray(prior.values.sum(axis=1), dtype=np.float64)


def sample_prior(prior: Prior, rng_seed: int, n: int) -> FloatArray:
    """Draw `n` i.i.d. values from the prior, deterministic in the seed."""
    if n < 1:
        raise DrbcInvalidDataException(f"Sample size must be >= 1, got {n}")

    return draw_prior(prior, spawn_rng(rng_seed), n)


def draw_prior(prior: Prior, rng: np.random.Generator, n: int) -> FloatArray:
    """Draw `n` i.i.d. values from the prior with an existing generator."""
    if isinstance(prior, GaussianPrior):
        shape = (n,) if prior.dim is None else (n, prior.dim)
        return prior.mean + prior.std * rng.standard_normal(shape)

    index = rng.choice(prior.size, size=n, p=prior.probs)
    return np.asarray(prior.values[index], dtype=np.float64)


def kl_finite(q: FinitePrior, p: FinitePrior) -> float:
    """KL(q || p) on a shared finite support with 0 log 0 = 0."""
    if not q.same_atoms(p):
        raise DrbcSupportMismatchException("Priors are supported on different atoms")

    charged = q.probs > 0.0
    if np.any(charged & (p.probs == 0.0)):
        return math.inf

    ratio = q.probs[charged] / p.probs[charged]
    return max(0.0, float(np.sum(q.probs[charged] * np.log(ratio))))


def _tilt(
    log_p: FloatArray, shifted: FloatArray, alpha: float
) -> tuple[FloatArray, float]:
    log_w = log_p - alpha * shifted
    log_z = float(logsumexp(log_w))
    q = np.exp(log_w - log_z)
    kl = -alpha * float(q @ shifted) - log_z
    return q, max(0.0, kl)


def tilt_worst_mean(
    p: FinitePrior,
    scores: FloatArray,
    delta: float,
    sense: Sense = Sense.MIN,
    *,
    strict: bool = False,
) -> TiltResult:
    """Extremize the mean score over {q: KL(q || p) <= delta} by exponential tilting.

    For sense MIN the extremizer is q_i proportional to p_i exp(-alpha score_i),
    with alpha chosen so that the KL constraint binds. Once delta reaches the KL
    of p restricted to the extremal atoms the constraint is slack and that
    restriction is returned.

    Args:
        p (FinitePrior): The baseline prior, positive on every atom.
        scores (FloatArray): One score per atom.
        delta (float): The radius.
        sense (Sense, optional): Minimize or maximize. Defaults to Sense.MIN.
        strict (bool, optional): Raise on equal scores instead of flagging. Defaults to False.

    Returns:
        TiltResult: The extremal distribution and mean.

    Raises:
        DrbcDegenerateScoresException: If all scores are equal and `strict` is set.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (p.size,):
        raise DrbcInvalidDataException(f"Expected {p.size} scores, got {scores.shape}")
    if not delta >= 0.0:
        raise DrbcInvalidDataException(f"Radius must be >= 0, got {delta}")
    if not p.has_full_support:
        raise DrbcInvalidDataException("Baseline prior must charge every atom")

    mean = float(p.probs @ scores)
    mean_values = np.asarray(p.probs @ p.values, dtype=np.float64)

    if np.ptp(scores) == 0.0:
        if strict:
            raise DrbcDegenerateScoresException("All scores are equal")
        return TiltResult(p, 0.0, mean, mean_values, 0.0, degenerate=True)
    if delta == 0.0:
        return TiltResult(p, 0.0, mean, mean_values, 0.0)

    directed = scores if sense is Sense.MIN else -scores
    shifted = directed - directed.min()
    extremal = shifted == 0.0
    extremal_mass = float(p.probs[extremal].sum())
    limit_kl = -math.log(extremal_mass)

    def saturated_result() -> TiltResult:
        q = np.where(extremal, p.probs / extremal_mass, 0.0)
        q_star = p.with_probs(q / q.sum())
        return TiltResult(
            q_star,
            math.inf,
            float(q_star.probs @ scores),
            np.asarray(q_star.probs @ p.values, dtype=np.float64),
            limit_kl,
            saturated=True,
        )

    if delta >= limit_kl:
        return saturated_result()

    log_p = np.log(p.probs)

    def excess_kl(alpha: float) -> float:
        return _tilt(log_p, shifted, alpha)[1] - delta

    upper = 1.0 / float(np.ptp(shifted))
    for _ in range(TILT_MAX_ITER):
        if excess_kl(upper) >= 0.0:
            break
        upper *= 2.0
    else:
        _LOGGER.debug("Radius %.3g is numerically at the saturation limit", delta)
        return saturated_result()

    alpha = float(brentq(excess_kl, 0.0, upper, xtol=1e-300, maxiter=TILT_MAX_ITER))
    q, kl = _tilt(log_p, shifted, alpha)
    if abs(kl - delta) > TILT_KL_TOL * max(1.0, delta):
        _LOGGER.warning("Tilted KL %.12g misses the radius %.12g", kl, delta)
    q_star = p.with_probs(q / q.sum())
    return TiltResult(
        q_star,
        alpha,
        float(q_star.probs @ scores),
        np.asarray(q_star.probs @ p.values, dtype=np.float64),
        kl,
    )


def primal_inner_inf(p: FinitePrior, scores: FloatArray, delta: float) -> float:
    """Infimum of the mean score over the KL ball around `p`, solved in the primal.

    The mean is minimized over the simplex with SLSQP under KL(q || p) <= delta.
    Atoms without mass under `p` stay uncharged.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (p.size,):
        raise DrbcInvalidDataException(f"Expected {p.size} scores, got {scores.shape}")
    if not delta >= 0.0:
        raise DrbcInvalidDataException(f"Radius must be >= 0, got {delta}")

    charged = p.probs > 0.0
    probs, scores = p.probs[charged], scores[charged]
    if probs.size == 1 or np.ptp(scores) == 0.0 or delta == 0.0:
        return float(probs @ scores)

    def kl_slack(q: FloatArray) -> float:
        return delta - float(rel_entr(np.maximum(q, 0.0), probs).sum())

    def kl_slack_jac(q: FloatArray) -> FloatArray:
        return np.asarray(
            -(np.log(np.maximum(q, _Q_FLOOR) / probs) + 1.0), dtype=np.float64
        )

    return _simplex_primal(probs, scores, kl_slack, kl_slack_jac, "KL")


def cressie_read_phi(x: FloatArray, k: float) -> FloatArray:
    """Cressie-Read generator (x^k - k x + k - 1)/(k (k - 1))."""
    x = np.asarray(x, dtype=np.float64)
    return np.asarray((x**k - k * x + k - 1.0) / (k * (k - 1.0)), dtype=np.float64)


def _simplex_primal(
    probs: FloatArray,
    scores: FloatArray,
    slack: Callable[[FloatArray], float],
    slack_jac: Callable[[FloatArray], FloatArray],
    name: str,
) -> float:
    result = minimize(
        lambda q: float(scores @ q),
        probs.copy(),
        jac=lambda q: scores,
        method="SLSQP",
        bounds=[(0.0, 1.0)] * probs.size,
        constraints=[
            {"type": "eq", "fun": lambda q: float(q.sum() - 1.0), "jac": lambda q: np.ones_like(q)},
            {"type": "ineq", "fun": slack, "jac": slack_jac},
        ],
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    if not result.success:
        _LOGGER.warning("%s primal solve stopped early: %s", name, result.message)

    q = np.maximum(result.x, 0.0)
    return float(scores @ (q / q.sum()))


def _cressie_read_primal(
    p: FinitePrior, scores: FloatArray, delta: float, k: float
) -> float:
    probs = p.probs

    def divergence_slack(q: FloatArray) -> float:
        return delta - float(probs @ cressie_read_phi(np.maximum(q, 0.0) / probs, k))

    def divergence_slack_jac(q: FloatArray) -> FloatArray:
        x = np.maximum(q, 0.0) / probs
        return np.asarray(-(x ** (k - 1.0) - 1.0) / (k - 1.0), dtype=np.float64)

    return _simplex_primal(
        probs, scores, divergence_slack, divergence_slack_jac, "Cressie-Read"
    )


def divergence_primal_inf(
    prior: FinitePrior, scores: FloatArray, radius: RadiusSpec
) -> float:
    """Infimum of the mean score over the divergence ball of `radius`."""
    scores = np.asarray(scores, dtype=np.float64)
    if radius.divergence is DivergenceKind.KL:
        return primal_inner_inf(prior, scores, radius.delta)
    if prior.size == 1 or np.ptp(scores) == 0.0 or radius.delta == 0.0:
        return float(prior.probs @ scores)
    return _cressie_read_primal(prior, scores, radius.delta, radius.k)
