"""Batch experiments and their report files."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, overload

import numpy as np

from drbc.config import (
    DualityCheckParams,
    ExperimentConfig,
    ExperimentParams,
    GapVsDeltaParams,
    LqCompareParams,
    RateTableParams,
    SettingsParams,
)
from drbc.const import (
    REPORT_SCHEMA_VERSION,
    DivergenceKind,
    DrbcEvent,
    ExperimentKind,
    InnerMode,
)
from drbc.dual import (
    InnerSimulator,
    cressie_read_dual,
    evaluate_policy_kl,
    kl_dual_exact,
)
from drbc.exceptions import DrbcInternalException
from drbc.lq import (
    LqLearnConfig,
    drbc_lq_learn,
    exploration_policy,
    gls_estimate,
    make_benchmark_model,
    oracle_controller,
    plugin_controller,
)
from drbc.merton import (
    BayesTerminalInnerSimulator,
    FractionPolicy,
    MertonInnerSimulator,
    cosine_drift,
    drbc_finite_learn,
    drbc_merton_alternate,
    sharpe_and_utility,
    true_cosine_policy,
)
from drbc.models import (
    AscentSchedule,
    DualEvalResult,
    FinitePrior,
    FloatArray,
    GaussianPrior,
    LqModel,
    LqPolicy,
    MertonMarket,
    NoiseBlock,
    QuadratureRule,
    RadiusSpec,
    TimeGrid,
)
from drbc.priors import divergence_primal_inf, draw_prior, primal_inner_inf
from drbc.sde import Drift, simulate_lq, simulate_lq_batch, simulate_wealth_batch, spawn_rng

__all__ = [
    "ReportRow",
    "PropertyCheck",
    "ExperimentResult",
    "ExperimentRunner",
    "run_rate_table",
    "run_gap_vs_delta",
    "run_settings",
    "run_lq_compare",
    "run_duality_check",
]

_LOGGER = logging.getLogger(__name__)

_ZERO_DELTA_TOL = 1e-9
_ORDERING_Z = 2.0


@dataclass(frozen=True)
class ReportRow:
    """One cell of an experiment table.

    Attributes:
        experiment(str): The experiment identifier.
        params(Mapping[str, Any]): The parameter tuple of the cell (delta, n, method, ...).
        metric(str): The metric name.
        mean(float): The mean over replications.
        std(float): The standard deviation over replications, NaN for a single one.
        replications(int): The number of values behind the mean.
    """

    experiment: str
    params: Mapping[str, Any]
    metric: str
    mean: float
    std: float
    replications: int

    def __post_init__(self) -> None:
        if self.std < 0.0:
            raise DrbcInternalException(f"Negative standard deviation in {self.metric}")
        if self.replications < 1:
            raise DrbcInternalException(f"Row {self.metric} has no replications")

    def to_record(self) -> dict[str, Any]:
        """Flatten the row for the CSV report."""
        return {
            "experiment": self.experiment,
            **self.params,
            "metric": self.metric,
            "mean": self.mean,
            "std": self.std,
            "replications": self.replications,
        }


@dataclass(frozen=True)
class PropertyCheck:
    """Pass/fail outcome of an asserted property.

    Attributes:
        name(str): The property name.
        passed(bool): Whether the property holds.
        detail(str): The numbers behind the verdict.
    """

    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass(frozen=True)
class ExperimentResult:
    """Rows and property checks of one experiment.

    Attributes:
        experiment(ExperimentKind): The experiment.
        rows(list[ReportRow]): The table rows.
        properties(list[PropertyCheck]): The asserted properties.
    """

    experiment: ExperimentKind
    rows: list[ReportRow] = field(default_factory=list)
    properties: list[PropertyCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """Whether every property holds."""
        return all(check.passed for check in self.properties)


def _derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _replicate[T](func: Callable[[int], T], count: int, workers: int) -> list[T]:
    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(func, range(count)))
    return [func(index) for index in range(count)]


def _mean_std(values: FloatArray | Sequence[float]) -> tuple[float, float]:
    array = np.asarray(values, dtype=np.float64)
    std = float(array.std(ddof=1)) if array.size > 1 else math.nan
    return float(array.mean()), std


def _params[P: ExperimentParams](config: ExperimentConfig, cls: type[P]) -> P:
    if not isinstance(config.params, cls):
        raise DrbcInternalException(
            f"{config.experiment} needs {cls.__name__}, got {type(config.params).__name__}"
        )
    return config.params


def _skipped(name: str, reason: str) -> PropertyCheck:
    return PropertyCheck(name=name, passed=True, detail=f"skipped: {reason}")


def _rate_properties(
    delta: float, stats: Mapping[int, tuple[float, float]], replications: int
) -> list[PropertyCheck]:
    scaling = f"sqrt_n_scaling[delta={delta:g}]"
    stability = f"mean_stability[delta={delta:g}]"
    if replications < 2 or len(stats) < 2:
        reason = "needs at least two replications and two sample sizes"
        return [_skipped(scaling, reason), _skipped(stability, reason)]

    n_small, n_large = min(stats), max(stats)
    expected = math.sqrt(n_small / n_large)
    ratio = stats[n_large][1] / stats[n_small][1]
    checks = [
        PropertyCheck(
            name=scaling,
            passed=0.67 * expected <= ratio <= 1.5 * expected,
            detail=f"std ratio {ratio:.4g} for n={n_small}->{n_large}, expected {expected:.4g}",
        )
    ]

    worst = 0.0
    for n_i, (mean_i, std_i) in stats.items():
        for n_j, (mean_j, std_j) in stats.items():
            if n_j <= n_i:
                continue
            pooled = math.sqrt((std_i**2 + std_j**2) / replications)
            worst = max(worst, abs(mean_i - mean_j) / pooled if pooled > 0.0 else 0.0)
    checks.append(
        PropertyCheck(
            name=stability,
            passed=worst <= 3.0,
            detail=f"largest mean difference {worst:.3f} pooled standard errors",
        )
    )
    return checks


def run_rate_table(config: ExperimentConfig) -> ExperimentResult:
    """Spread of the robust-value estimator of a fixed policy against the outer sample size.

    The policy is the DRBC policy learned at `policy_lambda`. Every replication
    runs the whole estimator on a fresh outer batch of each size: the dual
    ascent on that batch followed by the plug-in value at its multiplier.
    """
    params = _params(config, RateTableParams)
    kind = str(config.experiment)
    market, prior = params.market, params.prior
    quad = QuadratureRule.gauss_hermite(params.n_gh)

    _LOGGER.info("Learning the evaluated policy at lambda=%g", params.policy_lambda)
    learned = drbc_finite_learn(
        prior, market, min(params.deltas), params.policy_lambda, quad=quad
    )
    sim: InnerSimulator
    if params.inner is InnerMode.PATHS:
        sim = MertonInnerSimulator(
            market,
            FractionPolicy.drbc(learned.q_star, market, quad),
            TimeGrid(T=market.T, steps=params.inner_steps),
            paths_per_sample=params.paths_per_sample,
        )
    else:
        sim = BayesTerminalInnerSimulator(learned.q_star, market, quad)

    result = ExperimentResult(config.experiment)
    ascent = AscentSchedule(rule=params.ascent_rule, fixed_batch=True)
    for delta_index, delta in enumerate(params.deltas):
        stats: dict[int, tuple[float, float]] = {}
        for size_index, n in enumerate(params.sample_sizes):

            def replicate(
                rep: int, n: int = n, size_index: int = size_index
            ) -> DualEvalResult:
                return evaluate_policy_kl(
                    sim,
                    prior,
                    delta,
                    params.rmlmc,
                    n,
                    ascent,
                    seed=_derived_seed(config.seed, 2, delta_index, size_index, rep),
                )

            evaluations = _replicate(replicate, config.replications, config.workers)
            values = [evaluation.robust_value for evaluation in evaluations]
            stats[n] = _mean_std(values)
            _LOGGER.info(
                "delta=%g n=%d: mean multiplier %.6g",
                delta,
                n,
                float(np.mean([evaluation.lambda_star for evaluation in evaluations])),
            )
            result.rows.append(
                ReportRow(
                    experiment=kind,
                    params={"delta": delta, "n": n},
                    metric="robust_value",
                    mean=stats[n][0],
                    std=stats[n][1],
                    replications=config.replications,
                )
            )

        result.properties.extend(_rate_properties(delta, stats, config.replications))

    return result


def _terminal_wealth(
    market: MertonMarket,
    drifts: Drift | FloatArray,
    policy: FractionPolicy,
    increments: FloatArray,
    grid: TimeGrid,
) -> FloatArray:
    if callable(drifts) or np.ndim(drifts) == 0:
        wealth, _ = simulate_wealth_batch(market, drifts, policy, increments, grid)
        return np.asarray(wealth[:, -1])

    drifts = np.asarray(drifts, dtype=np.float64)
    terminal = np.empty(increments.shape[0])
    # paths sharing a drift are simulated together
    for b in np.unique(drifts):
        mask = drifts == b
        wealth, _ = simulate_wealth_batch(market, float(b), policy, increments[mask], grid)
        terminal[mask] = wealth[:, -1]
    return terminal


def run_gap_vs_delta(config: ExperimentConfig) -> ExperimentResult:
    """Utility gaps of DRC and DRBC to the optimum under a known cosine drift.

    Both robust policies start from the same baseline prior; the gap is the
    utility of the optimal time-varying fraction minus the policy's utility on
    common Brownian paths.
    """
    params = _params(config, GapVsDeltaParams)
    kind = str(config.experiment)
    market, prior = params.market, params.prior
    quad = QuadratureRule.gauss_hermite(params.n_gh)
    grid = TimeGrid(T=market.T, steps=params.steps)
    drift = cosine_drift(params.b0, params.kappa)
    optimal = true_cosine_policy(params.b0, params.kappa, market)
    ascent = AscentSchedule(rule=params.ascent_rule, fixed_batch=params.fixed_batch)

    policies: list[tuple[dict[str, Any], FractionPolicy]] = [
        ({"method": "bayes", "delta": 0.0}, FractionPolicy.bayesian(prior, market, quad))
    ]
    for delta_index, delta in enumerate(params.deltas):
        policies.append(
            ({"method": "drc", "delta": delta}, FractionPolicy.drc(prior, market, delta))
        )
        alternate = drbc_merton_alternate(
            prior,
            market,
            delta,
            params.rmlmc,
            params.n_outer,
            C=params.C,
            ascent=ascent,
            quad=quad,
            max_rounds=params.max_rounds,
            seed=_derived_seed(config.seed, 1, delta_index),
            workers=config.workers,
        )
        _LOGGER.info(
            "delta=%g: DRBC multiplier %.6g, KL %.4g", delta, alternate.lam, alternate.kl
        )
        policies.append(
            (
                {"method": "drbc", "delta": delta},
                FractionPolicy.drbc(alternate.learned.q_star, market, quad),
            )
        )

    def replicate(rep: int) -> FloatArray:
        rng = spawn_rng(_derived_seed(config.seed, 2, rep))
        increments = rng.standard_normal((params.n_paths, params.steps)) * math.sqrt(grid.dt)
        best = market.utility(_terminal_wealth(market, drift, optimal, increments, grid))
        return np.stack(
            [
                best - market.utility(_terminal_wealth(market, drift, policy, increments, grid))
                for _, policy in policies
            ]
        )

    gaps = np.concatenate(_replicate(replicate, config.replications, config.workers), axis=1)
    n_paths = gaps.shape[1]

    result = ExperimentResult(config.experiment)
    result.rows.append(
        ReportRow(kind, {"method": "optimal", "delta": 0.0}, "utility_gap", 0.0, 0.0, n_paths)
    )
    summary: dict[tuple[str, float], tuple[float, float]] = {}
    for (labels, _), row in zip(policies, gaps, strict=True):
        mean, std = _mean_std(row)
        summary[(labels["method"], labels["delta"])] = (mean, std / math.sqrt(n_paths))
        result.rows.append(ReportRow(kind, labels, "utility_gap", mean, std, n_paths))

    for delta in params.deltas:
        drbc_gap, drbc_se = summary[("drbc", delta)]
        drc_gap, drc_se = summary[("drc", delta)]
        result.properties.append(
            PropertyCheck(
                name=f"drbc_gap_le_drc_gap[delta={delta:g}]",
                passed=drbc_gap <= drc_gap,
                detail=f"DRBC gap {drbc_gap:.6g}, DRC gap {drc_gap:.6g}",
            )
        )
        result.properties.append(
            PropertyCheck(
                name=f"gaps_nonnegative[delta={delta:g}]",
                passed=drbc_gap >= -3.0 * drbc_se and drc_gap >= -3.0 * drc_se,
                detail=f"DRBC {_in_se(drbc_gap, drbc_se):.2f} SE, DRC {_in_se(drc_gap, drc_se):.2f} SE",
            )
        )
    return result


def _in_se(mean: float, se: float) -> float:
    if se > 0.0:
        return mean / se
    return math.copysign(math.inf, mean) if mean else 0.0


def _ordering(name: str, higher: FloatArray, lower: FloatArray) -> PropertyCheck:
    difference = (higher - lower).ravel()
    mean, std = _mean_std(difference)
    z = _in_se(mean, std / math.sqrt(difference.size))
    return PropertyCheck(
        name=name,
        passed=z > _ORDERING_Z,
        detail=f"mean utility difference {mean:.6g} ({z:.2f} paired SE)",
    )


def run_settings(config: ExperimentConfig) -> ExperimentResult:
    """Sharpe ratio and expected utility of competing policies on simulated markets.

    Setting 1 draws the drift of every path from the correct prior and compares
    the Bayes policies of both priors with DRBC learned from the incorrect one.
    Setting 2 fixes the drift and compares the Merton fraction at the truth
    with DRC and DRBC, both starting from the incorrect prior. All methods see
    the same drifts and Brownian paths.
    """
    params = _params(config, SettingsParams)
    kind = str(config.experiment)
    setting_one = config.experiment is ExperimentKind.SETTING1
    market = params.market
    quad = QuadratureRule.gauss_hermite(params.n_gh)
    grid = TimeGrid(T=market.T, steps=params.steps)
    incorrect = params.incorrect_prior
    ascent = AscentSchedule(rule=params.ascent_rule, fixed_batch=params.fixed_batch)

    methods: list[tuple[str, float | None, FractionPolicy]] = []
    if setting_one:
        methods.append(("bip", None, FractionPolicy.bayesian(incorrect, market, quad)))
        methods.append(
            ("bcp", None, FractionPolicy.bayesian(params.correct_prior, market, quad))
        )
    else:
        methods.append(("bcpd", None, FractionPolicy.merton(params.truth, market)))
        methods.extend(
            ("drc", delta, FractionPolicy.drc(incorrect, market, delta))
            for delta in params.deltas
        )

    for delta_index, delta in enumerate(params.deltas):
        alternate = drbc_merton_alternate(
            incorrect,
            market,
            delta,
            params.rmlmc,
            params.n_outer,
            C=params.C,
            ascent=ascent,
            quad=quad,
            max_rounds=params.max_rounds,
            tol=params.tol,
            seed=_derived_seed(config.seed, 1, delta_index),
            workers=config.workers,
        )
        _LOGGER.info(
            "delta=%g: DRBC multiplier %.6g after %d rounds",
            delta,
            alternate.lam,
            alternate.rounds,
        )
        methods.append(
            ("drbc", delta, FractionPolicy.drbc(alternate.learned.q_star, market, quad))
        )

    def replicate(rep: int) -> tuple[FloatArray, FloatArray]:
        rng = spawn_rng(_derived_seed(config.seed, 2, rep))
        if setting_one:
            drifts = draw_prior(params.correct_prior, rng, params.n_paths)
        else:
            drifts = np.full(params.n_paths, params.truth)
        increments = rng.standard_normal((params.n_paths, params.steps)) * math.sqrt(grid.dt)

        utilities, sharpes = [], []
        for _, _, policy in methods:
            terminal = _terminal_wealth(market, drifts, policy, increments, grid)
            utilities.append(market.utility(terminal))
            sharpes.append(sharpe_and_utility(terminal, market).sharpe)
        return np.stack(utilities), np.asarray(sharpes)

    outcomes = _replicate(replicate, config.replications, config.workers)
    utilities = np.stack([outcome[0] for outcome in outcomes])
    sharpes = np.stack([outcome[1] for outcome in outcomes])
    per_replication = utilities.mean(axis=2)

    result = ExperimentResult(config.experiment)
    index: dict[tuple[str, float | None], int] = {}
    for position, (method, delta, _) in enumerate(methods):
        index[(method, delta)] = position
        labels = {"method": method, "delta": "" if delta is None else delta}
        for metric, values in (
            ("sharpe", sharpes[:, position]),
            ("utility", per_replication[:, position]),
        ):
            mean, std = _mean_std(values)
            result.rows.append(
                ReportRow(kind, labels, metric, mean, std, config.replications)
            )

    def paths(method: str, delta: float | None = None) -> FloatArray:
        return np.asarray(utilities[:, index[(method, delta)], :])

    best, baseline = ("bcp", "bip") if setting_one else ("bcpd", "drc")
    for delta in params.deltas:
        tag = f"delta={delta:g}"
        result.properties.append(
            _ordering(f"{best}_ge_drbc[{tag}]", paths(best), paths("drbc", delta))
        )
        lower = paths(baseline) if setting_one else paths(baseline, delta)
        result.properties.append(
            _ordering(f"drbc_ge_{baseline}[{tag}]", paths("drbc", delta), lower)
        )

    for first, second in zip(params.deltas, params.deltas[1:], strict=False):
        u_first = float(paths("drbc", first).mean())
        u_second = float(paths("drbc", second).mean())
        change = abs(u_first - u_second) / abs(u_first)
        result.properties.append(
            PropertyCheck(
                name=f"drbc_stability[delta={first:g}->{second:g}]",
                passed=change < 0.01,
                detail=f"relative utility change {change:.4%}",
            )
        )
    return result


def _policy_cost(
    model: LqModel,
    theta: FloatArray,
    policy: LqPolicy,
    increments: FloatArray,
    x0: FloatArray,
) -> float:
    batch = simulate_lq_batch(model, theta, policy, increments, x0, raise_on_explode=False)
    if np.any(batch.exploded):
        _LOGGER.warning("%d evaluation rollouts exploded", int(batch.exploded.sum()))
    return float(-batch.rewards().mean())


def _objective_rises(history: Sequence[float]) -> bool:
    window = max(1, len(history) // 4)
    return float(np.mean(history[-window:])) >= float(np.mean(history[:window]))


@dataclass(frozen=True)
class _LqRun:
    oracle_cost: float
    plugin_cost: float
    drbc_costs: tuple[float, ...]
    rising: tuple[bool, ...]


def run_lq_compare(config: ExperimentConfig) -> ExperimentResult:
    """Gaps of plug-in and DRBC controllers to the oracle on a misspecified prior.

    Every run draws theta* from the true prior, identifies it from one
    exploration trajectory, and evaluates the oracle, the plug-in and one DRBC
    controller per radius on the same rollouts.
    """
    params = _params(config, LqCompareParams)
    kind = str(config.experiment)
    model = make_benchmark_model(
        params.d, params.k, params.m, params.T, params.steps, params.model_seed
    )
    nominal = GaussianPrior(mean=0.0, std=params.sigma_nom, dim=params.m)
    learn_config = LqLearnConfig(
        C_lam=params.C_lam,
        N_theta=params.n_theta,
        B_traj=params.b_traj,
        S_in=params.s_in,
        eta=params.eta,
        basis_size=params.basis_size,
        perturbation=params.perturbation,
        x0_scale=params.x0_scale,
    )
    sqrt_dt = math.sqrt(model.grid.dt)

    def replicate(run: int) -> _LqRun:
        seed = _derived_seed(config.seed, 1, run)
        rng = spawn_rng(seed)
        theta_star = params.sigma_true * rng.standard_normal(params.m)

        noise = NoiseBlock(
            grid=model.grid,
            increments=rng.standard_normal((params.steps, params.d)) * sqrt_dt,
            seed=seed,
        )
        x0 = params.x0_scale * rng.standard_normal(params.d)
        trajectory = simulate_lq(
            model, theta_star, exploration_policy(model, rng), noise, x0
        )
        belief = gls_estimate(trajectory, model, params.ridge)

        eval_noise = (
            rng.standard_normal((params.eval_rollouts, params.steps, params.d)) * sqrt_dt
        )
        eval_x0 = params.x0_scale * rng.standard_normal((params.eval_rollouts, params.d))

        def cost(policy: LqPolicy) -> float:
            return _policy_cost(model, theta_star, policy, eval_noise, eval_x0)

        drbc_costs, rising = [], []
        for delta_index, delta in enumerate(params.deltas):
            learned = drbc_lq_learn(
                model,
                nominal,
                delta,
                learn_config,
                belief,
                _derived_seed(config.seed, 2, run, delta_index),
            )
            drbc_costs.append(cost(learned.policy))
            rising.append(_objective_rises(learned.objective_history))

        _LOGGER.debug("run %d finished", run)
        return _LqRun(
            oracle_cost=cost(oracle_controller(model, theta_star)),
            plugin_cost=cost(plugin_controller(trajectory, model, params.ridge)),
            drbc_costs=tuple(drbc_costs),
            rising=tuple(rising),
        )

    runs = _replicate(replicate, config.replications, config.workers)
    oracle = np.array([run.oracle_cost for run in runs])
    plugin_gap = np.array([run.plugin_cost for run in runs]) - oracle
    drbc_gaps = np.array([run.drbc_costs for run in runs]) - oracle[:, np.newaxis]

    result = ExperimentResult(config.experiment)
    count = config.replications

    def add(labels: dict[str, Any], gaps: FloatArray, costs: FloatArray) -> None:
        for metric, values in (("gap", gaps), ("cost", costs)):
            mean, std = _mean_std(values)
            result.rows.append(ReportRow(kind, labels, metric, mean, std, count))

    add({"method": "oracle", "delta": ""}, oracle - oracle, oracle)
    add({"method": "plugin", "delta": ""}, plugin_gap, plugin_gap + oracle)
    for position, delta in enumerate(params.deltas):
        gaps = drbc_gaps[:, position]
        add({"method": "drbc", "delta": delta}, gaps, gaps + oracle)

    result.properties.append(
        PropertyCheck(
            name="oracle_gap_zero",
            passed=bool(np.all(oracle - oracle == 0.0)),
            detail="oracle evaluated against itself",
        )
    )
    plugin_mean, plugin_std = _mean_std(plugin_gap)
    for position, delta in enumerate(params.deltas):
        tag = f"delta={delta:g}"
        drbc_mean, drbc_std = _mean_std(drbc_gaps[:, position])
        result.properties.append(
            PropertyCheck(
                name=f"drbc_mean_gap_below_plugin[{tag}]",
                passed=drbc_mean < plugin_mean,
                detail=f"DRBC {drbc_mean:.6g}, plug-in {plugin_mean:.6g}",
            )
        )
        if count < 2:
            result.properties.append(
                _skipped(f"drbc_std_below_half_plugin[{tag}]", "needs two runs")
            )
        else:
            result.properties.append(
                PropertyCheck(
                    name=f"drbc_std_below_half_plugin[{tag}]",
                    passed=drbc_std < 0.5 * plugin_std,
                    detail=f"DRBC {drbc_std:.6g}, plug-in {plugin_std:.6g}",
                )
            )
        share = float(np.mean([run.rising[position] for run in runs]))
        result.properties.append(
            PropertyCheck(
                name=f"objective_trend[{tag}]",
                passed=share >= 0.9,
                detail=f"objective rose in {share:.0%} of runs",
            )
        )
    return result


@dataclass(frozen=True)
class _DualityErrors:
    kl: float
    cressie_read: float


def _random_instance(
    params: DualityCheckParams, rng: np.random.Generator
) -> tuple[FinitePrior, FloatArray]:
    size = int(rng.integers(params.min_atoms, params.max_atoms + 1))
    scores = rng.uniform(params.z_low, params.z_high, size)
    probs = rng.dirichlet(np.ones(size))
    return FinitePrior(values=np.arange(size, dtype=np.float64), probs=probs), scores


def run_duality_check(config: ExperimentConfig) -> ExperimentResult:
    """Dual values against primal oracles over random finite instances."""
    params = _params(config, DualityCheckParams)
    kind = str(config.experiment)
    log_low, log_high = math.log(params.delta_low), math.log(params.delta_high)

    def check(index: int) -> _DualityErrors:
        rng = spawn_rng(config.seed, 1, index)
        prior, scores = _random_instance(params, rng)
        delta = math.exp(rng.uniform(log_low, log_high))

        kl_value, _ = kl_dual_exact(prior, scores, delta)
        cr_value, _ = cressie_read_dual(scores, prior.probs, params.k, delta)
        radius = RadiusSpec(delta, DivergenceKind.CRESSIE_READ, params.k)
        return _DualityErrors(
            kl=abs(kl_value - primal_inner_inf(prior, scores, delta)),
            cressie_read=abs(cr_value - divergence_primal_inf(prior, scores, radius)),
        )

    def check_zero(index: int) -> float:
        prior, scores = _random_instance(params, spawn_rng(config.seed, 2, index))
        mean = float(prior.probs @ scores)
        kl_value, _ = kl_dual_exact(prior, scores, 0.0)
        cr_value, _ = cressie_read_dual(scores, prior.probs, params.k, 0.0)
        return max(abs(kl_value - mean), abs(cr_value - mean))

    errors = _replicate(check, params.instances, config.workers)
    zero_errors = _replicate(check_zero, params.zero_delta_instances, config.workers)

    result = ExperimentResult(config.experiment)
    for name, values, tolerance in (
        ("kl", np.array([error.kl for error in errors]), params.tolerance),
        ("cressie_read", np.array([error.cressie_read for error in errors]), params.tolerance),
        ("zero_delta", np.array(zero_errors), _ZERO_DELTA_TOL),
    ):
        mean, std = _mean_std(values)
        worst = float(values.max())
        labels = {"divergence": name}
        result.rows.append(ReportRow(kind, labels, "abs_error", mean, std, values.size))
        result.rows.append(ReportRow(kind, labels, "max_abs_error", worst, 0.0, values.size))
        result.properties.append(
            PropertyCheck(
                name=f"{name}_max_error",
                passed=worst <= tolerance,
                detail=f"max error {worst:.3e}, tolerance {tolerance:.0e}",
            )
        )
    return result


_RUNNERS: dict[ExperimentKind, Callable[[ExperimentConfig], ExperimentResult]] = {
    ExperimentKind.RATE_TABLE: run_rate_table,
    ExperimentKind.GAP_VS_DELTA: run_gap_vs_delta,
    ExperimentKind.SETTING1: run_settings,
    ExperimentKind.SETTING2: run_settings,
    ExperimentKind.LQ_COMPARE: run_lq_compare,
    ExperimentKind.DUALITY_CHECK: run_duality_check,
}


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ExperimentRunner:
    """Run one configured experiment and write its reports."""

    def __init__(self, config: ExperimentConfig) -> None:
        """Initialize the runner.

        Args:
            config (ExperimentConfig): The validated configuration.
        """
        self._config = config
        self._callbacks: defaultdict[DrbcEvent, list[Callable[..., None]]] = (
            defaultdict(list)
        )

    @property
    def config(self) -> ExperimentConfig:
        """The configuration."""
        return self._config

    def run(self) -> ExperimentResult:
        """Run the experiment and notify the callbacks.

        Returns:
            ExperimentResult: The rows and property checks.
        """
        kind = self._config.experiment
        _LOGGER.info(
            "Running %s with seed %d and %d replications",
            kind,
            self._config.seed,
            self._config.replications,
        )
        result = _RUNNERS[kind](self._config)

        for row in result.rows:
            self._trigger_event(DrbcEvent.ROW_EMITTED, row=row)
        for check in result.properties:
            self._trigger_event(DrbcEvent.PROPERTY_CHECKED, check=check)
        self._trigger_event(DrbcEvent.EXPERIMENT_FINISHED, result=result)

        _LOGGER.info(
            "Finished %s: %d rows, %d/%d properties hold",
            kind,
            len(result.rows),
            sum(check.passed for check in result.properties),
            len(result.properties),
        )
        return result

    def write_reports(
        self, result: ExperimentResult, output: Path | None = None
    ) -> tuple[Path, Path]:
        """Write `<experiment>.csv` and `<experiment>.json`.

        Args:
            result (ExperimentResult): The experiment outcome.
            output (Path | None, optional): The directory. Defaults to the configured output.

        Returns:
            tuple[Path, Path]: The CSV and JSON paths.
        """
        directory = output or self._config.output
        directory.mkdir(parents=True, exist_ok=True)
        name = str(result.experiment)
        csv_path = directory / f"{name}.csv"
        json_path = directory / f"{name}.json"

        param_keys: list[str] = []
        for row in result.rows:
            param_keys.extend(key for key in row.params if key not in param_keys)
        fieldnames = [
            "experiment",
            *param_keys,
            "metric",
            "mean",
            "std",
            "replications",
        ]
        with open(csv_path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(
                handle, fieldnames=fieldnames, restval="", lineterminator="\n"
            )
            writer.writeheader()
            for row in result.rows:
                writer.writerow(
                    {key: _cell(value) for key, value in row.to_record().items()}
                )

        summary = {
            "schema": REPORT_SCHEMA_VERSION,
            "experiment": name,
            "config": self._config.to_dict(),
            "passed": result.passed,
            "properties": [check.to_dict() for check in result.properties],
            "rows": len(result.rows),
        }
        json_path.write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        _LOGGER.info("Reports written to %s and %s", csv_path, json_path)
        return csv_path, json_path

    @overload
    def register_callback(
        self,
        event: Literal[DrbcEvent.ROW_EMITTED],
        callback: Callable[[ReportRow], None],
    ) -> None: ...

    @overload
    def register_callback(
        self,
        event: Literal[DrbcEvent.PROPERTY_CHECKED],
        callback: Callable[[PropertyCheck], None],
    ) -> None: ...

    @overload
    def register_callback(
        self,
        event: Literal[DrbcEvent.EXPERIMENT_FINISHED],
        callback: Callable[[ExperimentResult], None],
    ) -> None: ...

    def register_callback(
        self,
        event: DrbcEvent,
        callback: Callable[..., None],
    ) -> None:
        """Register a callback for a specific event."""
        if callback in self._callbacks[event]:
            return

        self._callbacks[event].append(callback)

    @overload
    def unregister_callback(
        self,
        event: Literal[DrbcEvent.ROW_EMITTED],
        callback: Callable[[ReportRow], None],
    ) -> None: ...

    @overload
    def unregister_callback(
        self,
        event: Literal[DrbcEvent.PROPERTY_CHECKED],
        callback: Callable[[PropertyCheck], None],
    ) -> None: ...

    @overload
    def unregister_callback(
        self,
        event: Literal[DrbcEvent.EXPERIMENT_FINISHED],
        callback: Callable[[ExperimentResult], None],
    ) -> None: ...

    def unregister_callback(
        self,
        event: DrbcEvent,
        callback: Callable[..., None],
    ) -> None:
        """Unregister a callback for a specific event."""
        if callback not in self._callbacks[event]:
            return

        self._callbacks[event].remove(callback)

    @overload
    def _trigger_event(
        self, event: Literal[DrbcEvent.ROW_EMITTED], *, row: ReportRow
    ) -> None: ...

    @overload
    def _trigger_event(
        self, event: Literal[DrbcEvent.PROPERTY_CHECKED], *, check: PropertyCheck
    ) -> None: ...

    @overload
    def _trigger_event(
        self, event: Literal[DrbcEvent.EXPERIMENT_FINISHED], *, result: ExperimentResult
    ) -> None: ...

    def _trigger_event(
        self,
        event: DrbcEvent,
        *,
        row: ReportRow | None = None,
        check: PropertyCheck | None = None,
        result: ExperimentResult | None = None,
    ) -> None:
        """Call the callbacks for a specific event."""
        args: tuple[ReportRow] | tuple[PropertyCheck] | tuple[ExperimentResult]

        match event:
            case DrbcEvent.ROW_EMITTED:
                if row is None:
                    raise DrbcInternalException(
                        "row must not be None for ROW_EMITTED event"
                    )
                args = (row,)
            case DrbcEvent.PROPERTY_CHECKED:
                if check is None:
                    raise DrbcInternalException(
                        "check must not be None for PROPERTY_CHECKED event"
                    )
                args = (check,)
            case DrbcEvent.EXPERIMENT_FINISHED:
                if result is None:
                    raise DrbcInternalException(
                        "result must not be None for EXPERIMENT_FINISHED event"
                    )
                args = (result,)

        for callback in self._callbacks[event]:
            callback(*args)
