"""Experiment configuration files.

A configuration is a flat YAML mapping::

    experiment: rate_table
    seed: 0
    replications: 100
    workers: 4
    output: reports
    full: false
    params:
      deltas: [0.01, 0.05, 0.1]
      sample_sizes: [100, 1000, 10000]

Every experiment validates `params` with its own frozen dataclass. Omitted
keys take the desk-scale defaults; `full: true` switches to the published
scale before the file's own values are applied.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any, ClassVar, Self

import yaml

from drbc.const import (
    DEFAULT_INNER_STEPS,
    DEFAULT_N0,
    DEFAULT_N_GH,
    DEFAULT_R,
    ExperimentKind,
    InnerMode,
    StepRule,
)
from drbc.exceptions import DrbcConfigException
from drbc.models import FinitePrior, MertonMarket, RmlmcParams

__all__ = [
    "H4_ATOMS",
    "H4_PROBS",
    "INCORRECT_PROBS",
    "CORRECT_PROBS",
    "ExperimentParams",
    "RateTableParams",
    "GapVsDeltaParams",
    "SettingsParams",
    "LqCompareParams",
    "DualityCheckParams",
    "ExperimentConfig",
    "default_config",
    "config_from_mapping",
    "read_config_file",
    "load_config",
]

"""Atoms of the five-point drift prior."""
H4_ATOMS = (0.01, 0.46, 0.30, 0.21, 0.27)

"""Probabilities of the five-point drift prior used by the rate table."""
H4_PROBS = (0.05, 0.35, 0.35, 0.15, 0.1)

"""The misspecified prior of both settings."""
INCORRECT_PROBS = (0.5, 0.05, 0.2, 0.15, 0.1)

"""The prior the Setting 1 drifts are drawn from."""
CORRECT_PROBS = (0.05, 0.5, 0.1, 0.15, 0.2)

_TOP_LEVEL_KEYS = frozenset(
    {"experiment", "seed", "replications", "workers", "output", "full", "params"}
)


def _floats(values: Any, name: str) -> tuple[float, ...]:
    if isinstance(values, (int, float)):
        values = [values]
    try:
        result = tuple(float(value) for value in values)
    except (TypeError, ValueError) as ex:
        raise DrbcConfigException(f"{name} must be a list of numbers") from ex
    if not result or not all(math.isfinite(value) for value in result):
        raise DrbcConfigException(f"{name} must be a non-empty list of finite numbers")
    return result


def _ints(values: Any, name: str) -> tuple[int, ...]:
    floats = _floats(values, name)
    if any(value != int(value) for value in floats):
        raise DrbcConfigException(f"{name} must contain integers")
    return tuple(int(value) for value in floats)


def _check_deltas(deltas: tuple[float, ...], name: str, *, positive: bool = False) -> None:
    for delta in deltas:
        if delta < 0.0:
            raise DrbcConfigException(f"{name} must be >= 0, got {delta}")
        if positive and delta == 0.0:
            raise DrbcConfigException(f"{name} must be > 0, got {delta}")


def _check_positive(value: float, name: str) -> None:
    if not value > 0:
        raise DrbcConfigException(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class ExperimentParams:
    """Base of the per-experiment parameter blocks.

    Subclasses set `DEFAULT_REPLICATIONS`, `FULL_REPLICATIONS` and the
    `FULL_SCALE` overrides used by `full: true`.
    """

    DEFAULT_REPLICATIONS: ClassVar[int] = 1
    FULL_REPLICATIONS: ClassVar[int] = 1
    FULL_SCALE: ClassVar[Mapping[str, Any]] = {}

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], *, full: bool = False) -> Self:
        """Build the block from a decoded `params` mapping."""
        known = {item.name for item in dataclasses.fields(cls) if item.init}
        unknown = sorted(set(data) - known)
        if unknown:
            raise DrbcConfigException(
                f"Unknown parameter(s) {', '.join(unknown)} for {cls.__name__}; "
                f"expected a subset of {', '.join(sorted(known))}"
            )
        values = {**(cls.FULL_SCALE if full else {}), **data}
        try:
            return cls(**values)
        except (TypeError, ValueError) as ex:
            raise DrbcConfigException(f"Invalid parameters for {cls.__name__}: {ex}") from ex

    def _integers(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if (
                isinstance(value, bool)
                or not isinstance(value, (int, float))
                or not math.isfinite(value)
                or value != int(value)
            ):
                raise DrbcConfigException(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    def _choice(self, name: str, enum: type[StrEnum]) -> None:
        value = getattr(self, name)
        try:
            object.__setattr__(self, name, enum(value))
        except ValueError as ex:
            raise DrbcConfigException(
                f"{name} must be one of {', '.join(enum)}, got {value!r}"
            ) from ex

    def to_dict(self) -> dict[str, Any]:
        return {
            key: list(value) if isinstance(value, tuple) else value
            for key, value in dataclasses.asdict(self).items()
        }


@dataclass(frozen=True)
class _MarketParams(ExperimentParams):
    r: float = 0.05
    sigma: float = 0.4
    T: float = 1.0
    x0: float = 1.0
    alpha: float = 0.5
    R: float = DEFAULT_R
    n0: int = DEFAULT_N0
    n_gh: int = DEFAULT_N_GH
    ascent_rule: StepRule = StepRule.SIGN_ADAPTIVE

    def __post_init__(self) -> None:
        self._integers("n0", "n_gh")
        self._choice("ascent_rule", StepRule)
        if not 0.0 < self.alpha < 1.0:
            raise DrbcConfigException(
                f"alpha must lie in (0, 1), got {self.alpha}; power utility needs 0 < alpha < 1"
            )
        if not 0.5 < self.R < 0.75:
            raise DrbcConfigException(
                f"R must lie in (1/2, 3/4), got {self.R}; outside it the randomized "
                "estimator has infinite cost or variance"
            )
        _check_positive(self.sigma, "sigma")
        _check_positive(self.T, "T")
        _check_positive(self.x0, "x0")
        _check_positive(self.n_gh, "n_gh")
        if self.n0 < 0:
            raise DrbcConfigException(f"n0 must be >= 0, got {self.n0}")

    @property
    def market(self) -> MertonMarket:
        """The market built from r, sigma, T, x0 and alpha."""
        return MertonMarket(
            r=self.r, sigma=self.sigma, T=self.T, x0=self.x0, alpha=self.alpha
        )

    @property
    def rmlmc(self) -> RmlmcParams:
        """The randomized level law."""
        return RmlmcParams(R=self.R, n0=self.n0)

    def _coerce(self, name: str, *, integer: bool = False) -> None:
        value = getattr(self, name)
        object.__setattr__(self, name, _ints(value, name) if integer else _floats(value, name))

    def _prior(self, atoms: tuple[float, ...], probs: tuple[float, ...], name: str) -> None:
        if len(atoms) != len(probs):
            raise DrbcConfigException(f"atoms and {name} must have the same length")
        if any(p <= 0.0 for p in probs) or abs(math.fsum(probs) - 1.0) > 1e-9:
            raise DrbcConfigException(f"{name} must be positive and sum to 1")
        if len(set(atoms)) != len(atoms):
            raise DrbcConfigException("atoms must be distinct")


def _normalized(atoms: tuple[float, ...], probs: tuple[float, ...]) -> FinitePrior:
    total = math.fsum(probs)
    return FinitePrior(values=list(atoms), probs=[p / total for p in probs])


@dataclass(frozen=True)
class RateTableParams(_MarketParams):
    """Robust value of a fixed policy against the outer sample size.

    Attributes:
        atoms(tuple[float, ...]): Prior atoms.
        probs(tuple[float, ...]): Prior probabilities.
        deltas(tuple[float, ...]): KL radii.
        sample_sizes(tuple[int, ...]): Outer sample sizes.
        policy_lambda(float): Multiplier of the learning step producing the policy.
        inner(InnerMode): Exact terminal utilities or simulated wealth paths.
        inner_steps(int): Time steps of simulated inner paths.
        paths_per_sample(int): Paths averaged into one inner sample.
    """

    DEFAULT_REPLICATIONS: ClassVar[int] = 100
    FULL_REPLICATIONS: ClassVar[int] = 100
    FULL_SCALE: ClassVar[Mapping[str, Any]] = {"inner_steps": DEFAULT_INNER_STEPS}

    atoms: tuple[float, ...] = H4_ATOMS
    probs: tuple[float, ...] = H4_PROBS
    deltas: tuple[float, ...] = (0.01, 0.05, 0.1)
    sample_sizes: tuple[int, ...] = (100, 1000, 10000)
    policy_lambda: float = 100.0
    inner: InnerMode = InnerMode.TERMINAL
    inner_steps: int = 250
    paths_per_sample: int = 1

    def __post_init__(self) -> None:
        super().__post_init__()
        self._coerce("atoms")
        self._coerce("probs")
        self._coerce("deltas")
        self._coerce("sample_sizes", integer=True)
        self._prior(self.atoms, self.probs, "probs")
        _check_deltas(self.deltas, "deltas", positive=True)
        if any(n < 2 for n in self.sample_sizes):
            raise DrbcConfigException("sample_sizes must all be >= 2")
        _check_positive(self.policy_lambda, "policy_lambda")
        self._integers("inner_steps", "paths_per_sample")
        self._choice("inner", InnerMode)
        _check_positive(self.inner_steps, "inner_steps")
        _check_positive(self.paths_per_sample, "paths_per_sample")

    @property
    def prior(self) -> FinitePrior:
        """The baseline prior."""
        return _normalized(self.atoms, self.probs)


@dataclass(frozen=True)
class GapVsDeltaParams(_MarketParams):
    """Utility gaps to the optimum under a known cosine drift.

    Attributes:
        atoms(tuple[float, ...]): Prior atoms.
        probs(tuple[float, ...]): Prior probabilities.
        b0(float): Amplitude of the drift (b0 / 2)(1 + cos(kappa t)).
        kappa(float): Angular frequency of the drift.
        deltas(tuple[float, ...]): KL radii.
        n_paths(int): Market paths per replication.
        steps(int): Time steps per path.
        n_outer(int): Outer draws of each robust evaluation.
        C(float): Initial multiplier constant, lambda0 = C / sqrt(delta).
        max_rounds(int): Alternation rounds.
        fixed_batch(bool): Whether each robust evaluation reuses one outer batch.
    """

    DEFAULT_REPLICATIONS: ClassVar[int] = 1
    FULL_REPLICATIONS: ClassVar[int] = 10
    FULL_SCALE: ClassVar[Mapping[str, Any]] = {
        "steps": 1000,
        "n_outer": 2000,
        "max_rounds": 20,
        "fixed_batch": False,
    }

    atoms: tuple[float, ...] = H4_ATOMS
    probs: tuple[float, ...] = H4_PROBS
    b0: float = 0.6
    kappa: float = 2.0 * math.pi
    deltas: tuple[float, ...] = (0.02, 0.05, 0.1, 0.2, 0.4)
    n_paths: int = 2000
    steps: int = 250
    n_outer: int = 500
    C: float = 0.33
    max_rounds: int = 5
    fixed_batch: bool = True

    def __post_init__(self) -> None:
        super().__post_init__()
        self._coerce("atoms")
        self._coerce("probs")
        self._integers("n_paths", "steps", "n_outer", "max_rounds")
        self._coerce("deltas")
        self._prior(self.atoms, self.probs, "probs")
        _check_deltas(self.deltas, "deltas", positive=True)
        for name in ("n_paths", "steps", "n_outer", "C", "max_rounds"):
            _check_positive(getattr(self, name), name)
        if self.n_paths < 2 or self.n_outer < 2:
            raise DrbcConfigException("n_paths and n_outer must be >= 2")

    @property
    def prior(self) -> FinitePrior:
        """The baseline prior."""
        return _normalized(self.atoms, self.probs)


@dataclass(frozen=True)
class SettingsParams(_MarketParams):
    """Sharpe ratio and utility of competing policies on simulated markets.

    Attributes:
        atoms(tuple[float, ...]): Prior atoms.
        incorrect_probs(tuple[float, ...]): The misspecified prior every robust method starts from.
        correct_probs(tuple[float, ...]): The prior the Setting 1 drifts are drawn from.
        truth(float): The Setting 2 drift.
        deltas(tuple[float, ...]): KL radii of the robust methods.
        n_paths(int): Market paths per replication.
        steps(int): Time steps per path.
        n_outer(int): Outer draws of each robust evaluation.
        C(float): Initial multiplier constant, lambda0 = C / sqrt(delta).
        max_rounds(int): Alternation rounds.
        tol(float): Stop once consecutive multipliers differ by less.
        fixed_batch(bool): Whether each robust evaluation reuses one outer batch.
    """

    DEFAULT_REPLICATIONS: ClassVar[int] = 10
    FULL_REPLICATIONS: ClassVar[int] = 100
    FULL_SCALE: ClassVar[Mapping[str, Any]] = {
        "steps": 1000,
        "n_outer": 2000,
        "fixed_batch": False,
    }

    atoms: tuple[float, ...] = H4_ATOMS
    incorrect_probs: tuple[float, ...] = INCORRECT_PROBS
    correct_probs: tuple[float, ...] = CORRECT_PROBS
    truth: float = 0.46
    deltas: tuple[float, ...] = (1e-3, 1e-2)
    n_paths: int = 200
    steps: int = 250
    n_outer: int = 1000
    C: float = 0.33
    max_rounds: int = 20
    tol: float = 1e-3
    fixed_batch: bool = True

    def __post_init__(self) -> None:
        super().__post_init__()
        self._coerce("atoms")
        self._coerce("incorrect_probs")
        self._coerce("correct_probs")
        self._integers("n_paths", "steps", "n_outer", "max_rounds")
        self._coerce("deltas")
        self._prior(self.atoms, self.incorrect_probs, "incorrect_probs")
        self._prior(self.atoms, self.correct_probs, "correct_probs")
        _check_deltas(self.deltas, "deltas", positive=True)
        for name in ("steps", "n_outer", "C", "max_rounds", "tol"):
            _check_positive(getattr(self, name), name)
        if self.n_paths < 2:
            raise DrbcConfigException(f"n_paths must be >= 2, got {self.n_paths}")

    @property
    def incorrect_prior(self) -> FinitePrior:
        """The misspecified baseline prior."""
        return _normalized(self.atoms, self.incorrect_probs)

    @property
    def correct_prior(self) -> FinitePrior:
        """The prior of the Setting 1 drifts."""
        return _normalized(self.atoms, self.correct_probs)


@dataclass(frozen=True)
class LqCompareParams(ExperimentParams):
    """Plug-in, oracle and robust LQ controllers on a misspecified prior.

    Attributes:
        d(int): State dimension.
        k(int): Control dimension.
        m(int): Number of unknown drift directions.
        T(float): Horizon.
        steps(int): Time steps.
        model_seed(int): Seed of the benchmark model matrices.
        sigma_true(float): Standard deviation of the prior theta* is drawn from.
        sigma_nom(float): Standard deviation of the nominal prior used for learning.
        deltas(tuple[float, ...]): KL radii of the robust controller.
        eval_rollouts(int): Common-noise rollouts per evaluation.
        x0_scale(float): Standard deviation of the initial states.
        ridge(float): Ridge of the identification regression.
        C_lam(float): Multiplier constant, lambda = C_lam / sqrt(delta).
        n_theta(int): Prior draws per learning step.
        b_traj(int): Rollouts per prior draw.
        s_in(int): Learning steps.
        eta(float): Base ascent gain.
        perturbation(float): Base perturbation size.
        basis_size(int): Number of time polynomials in the gain basis.
    """

    DEFAULT_REPLICATIONS: ClassVar[int] = 30
    FULL_REPLICATIONS: ClassVar[int] = 100
    FULL_SCALE: ClassVar[Mapping[str, Any]] = {
        "d": 10,
        "k": 5,
        "m": 10,
        "eval_rollouts": 512,
        "n_theta": 32,
        "b_traj": 64,
        "s_in": 200,
    }

    d: int = 4
    k: int = 2
    m: int = 4
    T: float = 2.0
    steps: int = 100
    model_seed: int = 12345
    sigma_true: float = 0.5
    sigma_nom: float = 1.0
    deltas: tuple[float, ...] = (0.01, 0.05, 0.1)
    eval_rollouts: int = 128
    x0_scale: float = 1.0
    ridge: float = 0.0
    C_lam: float = 1.0
    n_theta: int = 16
    b_traj: int = 32
    s_in: int = 100
    eta: float = 0.01
    perturbation: float = 0.1
    basis_size: int = 2

    def __post_init__(self) -> None:
        self._check()

    def _check(self) -> None:
        self._integers(
            "d",
            "k",
            "m",
            "steps",
            "model_seed",
            "eval_rollouts",
            "n_theta",
            "b_traj",
            "s_in",
            "basis_size",
        )
        object.__setattr__(self, "deltas", _floats(self.deltas, "deltas"))
        _check_deltas(self.deltas, "deltas", positive=True)
        for name in (
            "d",
            "k",
            "m",
            "T",
            "steps",
            "sigma_true",
            "sigma_nom",
            "eval_rollouts",
            "x0_scale",
            "C_lam",
            "n_theta",
            "b_traj",
            "s_in",
            "eta",
            "perturbation",
            "basis_size",
        ):
            _check_positive(getattr(self, name), name)
        if self.k > self.d:
            raise DrbcConfigException(f"k must not exceed d, got k={self.k}, d={self.d}")
        if self.ridge < 0.0:
            raise DrbcConfigException(f"ridge must be >= 0, got {self.ridge}")
        if self.model_seed < 0:
            raise DrbcConfigException("model_seed must be >= 0")


@dataclass(frozen=True)
class DualityCheckParams(ExperimentParams):
    """Random finite instances comparing dual values with primal oracles.

    Attributes:
        instances(int): Number of random instances.
        min_atoms(int): Smallest atom count.
        max_atoms(int): Largest atom count.
        z_low(float): Lower end of the uniform payoffs.
        z_high(float): Upper end of the uniform payoffs.
        delta_low(float): Lower end of the log-uniform radii.
        delta_high(float): Upper end of the log-uniform radii.
        k(float): Cressie-Read exponent.
        zero_delta_instances(int): Extra instances solved at radius zero.
        tolerance(float): Admissible absolute error.
    """

    instances: int = 1000
    min_atoms: int = 2
    max_atoms: int = 10
    z_low: float = -5.0
    z_high: float = 5.0
    delta_low: float = 1e-3
    delta_high: float = 2.0
    k: float = 2.0
    zero_delta_instances: int = 50
    tolerance: float = 1e-3

    def __post_init__(self) -> None:
        self._integers("instances", "min_atoms", "max_atoms", "zero_delta_instances")
        if self.instances < 1 or self.zero_delta_instances < 1:
            raise DrbcConfigException("instances and zero_delta_instances must be >= 1")
        if not 2 <= self.min_atoms <= self.max_atoms:
            raise DrbcConfigException(
                f"Need 2 <= min_atoms <= max_atoms, got {self.min_atoms}, {self.max_atoms}"
            )
        if not self.z_low < self.z_high:
            raise DrbcConfigException("z_low must be below z_high")
        if not 0.0 < self.delta_low <= self.delta_high:
            raise DrbcConfigException(
                f"Need 0 < delta_low <= delta_high, got {self.delta_low}, {self.delta_high}"
            )
        if not self.k > 1.0:
            raise DrbcConfigException(f"k must exceed 1, got {self.k}")
        _check_positive(self.tolerance, "tolerance")


_PARAMS: dict[ExperimentKind, type[ExperimentParams]] = {
    ExperimentKind.RATE_TABLE: RateTableParams,
    ExperimentKind.GAP_VS_DELTA: GapVsDeltaParams,
    ExperimentKind.SETTING1: SettingsParams,
    ExperimentKind.SETTING2: SettingsParams,
    ExperimentKind.LQ_COMPARE: LqCompareParams,
    ExperimentKind.DUALITY_CHECK: DualityCheckParams,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment configuration.

    Attributes:
        experiment(ExperimentKind): The experiment to run.
        params(ExperimentParams): The experiment parameters.
        seed(int): The master seed.
        replications(int): The number of replications.
        workers(int): Worker threads for replications.
        output(Path): The report directory.
        full(bool): Whether the published scale is used.
    """

    experiment: ExperimentKind
    params: ExperimentParams
    seed: int = 0
    replications: int = 1
    workers: int = 1
    output: Path = field(default_factory=lambda: Path("reports"))
    full: bool = False

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise DrbcConfigException(f"seed must be >= 0, got {self.seed}")
        if self.replications < 1:
            raise DrbcConfigException(
                f"replications must be >= 1, got {self.replications}"
            )
        if self.workers < 1:
            raise DrbcConfigException(f"workers must be >= 1, got {self.workers}")
        expected = _PARAMS[self.experiment]
        if not isinstance(self.params, expected):
            raise DrbcConfigException(
                f"{self.experiment} needs {expected.__name__}, got {type(self.params).__name__}"
            )

    def to_dict(self) -> dict[str, Any]:
        """The configuration as written into the JSON summary."""
        return {
            "experiment": str(self.experiment),
            "seed": self.seed,
            "replications": self.replications,
            "full": self.full,
            "params": self.params.to_dict(),
        }


def _integer(data: Mapping[str, Any], key: str, default: int) -> int:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise DrbcConfigException(f"{key} must be an integer, got {value!r}")
    return value


def config_from_mapping(data: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a decoded configuration mapping.

    Raises:
        DrbcConfigException: If a key is unknown or a value is out of range.
    """
    unknown = sorted(set(data) - _TOP_LEVEL_KEYS)
    if unknown:
        raise DrbcConfigException(
            f"Unknown key(s) {', '.join(unknown)}; expected a subset of "
            f"{', '.join(sorted(_TOP_LEVEL_KEYS))}"
        )
    if "experiment" not in data:
        raise DrbcConfigException("Missing key 'experiment'")
    try:
        kind = ExperimentKind(data["experiment"])
    except ValueError as ex:
        raise DrbcConfigException(
            f"experiment must be one of {', '.join(ExperimentKind)}, got {data['experiment']!r}"
        ) from ex

    full = data.get("full", False)
    if not isinstance(full, bool):
        raise DrbcConfigException(f"full must be true or false, got {full!r}")
    params_data = data.get("params") or {}
    if not isinstance(params_data, Mapping):
        raise DrbcConfigException("params must be a mapping")

    params_cls = _PARAMS[kind]
    params = params_cls.from_mapping(params_data, full=full)
    default_replications = (
        params_cls.FULL_REPLICATIONS if full else params_cls.DEFAULT_REPLICATIONS
    )
    replications = data.get("replications")

    return ExperimentConfig(
        experiment=kind,
        params=params,
        seed=_integer(data, "seed", 0),
        replications=(
            default_replications
            if replications is None
            else _integer(data, "replications", default_replications)
        ),
        workers=_integer(data, "workers", 1),
        output=Path(str(data.get("output", "reports"))),
        full=full,
    )


def default_config(kind: ExperimentKind | str, *, full: bool = False) -> ExperimentConfig:
    """The configuration of `kind` with every default."""
    return config_from_mapping({"experiment": str(kind), "full": full})


def read_config_file(path: Path | str) -> dict[str, Any]:
    """Read a YAML configuration file into a plain mapping."""
    try:
        with open(path, encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except OSError as ex:
        raise DrbcConfigException(f"Cannot read config file {path}") from ex
    except yaml.YAMLError as ex:
        raise DrbcConfigException(f"Invalid YAML in {path}") from ex

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise DrbcConfigException(f"Config file {path} must contain a mapping")
    return data


def load_config(path: Path | str, **overrides: Any) -> ExperimentConfig:
    """Load and validate a configuration file; non-None overrides win."""
    data = read_config_file(path)
    data.update({key: value for key, value in overrides.items() if value is not None})
    return config_from_mapping(data)
