"""Constants for the drbc library."""

from enum import StrEnum, auto

__all__ = [
    "DEFAULT_R",
    "DEFAULT_N0",
    "DEFAULT_N_GH",
    "DEFAULT_INNER_STEPS",
    "DEFAULT_U_MAX",
    "DEFAULT_EXPLORATION_SCALE",
    "DEFAULT_STEP0",
    "DEFAULT_STEP_DECAY",
    "DEFAULT_ASCENT_MAX_ITERS",
    "DEFAULT_ASCENT_TOL",
    "LAMBDA_FLOOR_SCALE",
    "PATH_EXPLOSION_THRESHOLD",
    "RICCATI_BLOWUP_THRESHOLD",
    "EXPLODED_ROLLOUT_REWARD",
    "PROBABILITY_SUM_TOL",
    "TILT_KL_TOL",
    "TILT_MAX_ITER",
    "REPORT_SCHEMA_VERSION",
    "DivergenceKind",
    "Sense",
    "StepRule",
    "PolicyTag",
    "ExperimentKind",
    "InnerMode",
    "DrbcEvent",
]

"""The default geometric ratio of the randomized level law."""
DEFAULT_R = 0.65

"""The default base level of the randomized level law."""
DEFAULT_N0 = 3

"""The default number of Gauss-Hermite nodes."""
DEFAULT_N_GH = 64

"""The number of time steps of inner wealth simulations at the published scale."""
DEFAULT_INNER_STEPS = 1000

"""The default elementwise bound on LQ controls."""
DEFAULT_U_MAX = 50.0

"""The default entry scale of the random exploration gain."""
DEFAULT_EXPLORATION_SCALE = 0.3

"""The default initial step of the diminishing ascent schedule."""
DEFAULT_STEP0 = 0.01

"""The number of iterations after which the diminishing step has halved."""
DEFAULT_STEP_DECAY = 50.0

"""The default iteration limit of the dual ascent."""
DEFAULT_ASCENT_MAX_ITERS = 200

"""The default absolute tolerance on successive dual iterates."""
DEFAULT_ASCENT_TOL = 1e-6

"""The relative floor of the dual variable, scaled by max(1, |mean payoff|)."""
LAMBDA_FLOOR_SCALE = 1e-6

"""The absolute wealth or state level at which a simulated path is aborted."""
PATH_EXPLOSION_THRESHOLD = 1e12

"""The norm of the Riccati solution at which integration is aborted."""
RICCATI_BLOWUP_THRESHOLD = 1e12

"""The reward assigned to an LQ rollout that exploded during learning."""
EXPLODED_ROLLOUT_REWARD = -1e6

"""The tolerance on the total mass of a finite prior."""
PROBABILITY_SUM_TOL = 1e-12

"""The tolerance on the KL radius reached by exponential tilting."""
TILT_KL_TOL = 1e-10

"""The iteration limit of the tilting root search."""
TILT_MAX_ITER = 200

"""The version of the report file schema."""
REPORT_SCHEMA_VERSION = 1


class DivergenceKind(StrEnum):
    """Divergence used to build the prior ambiguity set."""

    KL = auto()
    CRESSIE_READ = auto()


class Sense(StrEnum):
    """Direction of the worst-case mean."""

    MIN = auto()
    MAX = auto()


class StepRule(StrEnum):
    """Step rule of the dual ascent."""

    DIMINISHING = auto()
    SIGN_ADAPTIVE = auto()


class PolicyTag(StrEnum):
    """Kind of an investment-fraction policy."""

    BAYESIAN = auto()
    DRC = auto()
    DRBC = auto()
    CONSTANT = auto()
    TIME_VARYING = auto()


class ExperimentKind(StrEnum):
    """Batch experiment identifier."""

    RATE_TABLE = auto()
    GAP_VS_DELTA = auto()
    SETTING1 = auto()
    SETTING2 = auto()
    LQ_COMPARE = auto()
    DUALITY_CHECK = auto()


class InnerMode(StrEnum):
    """Inner sampler of the rate table."""

    TERMINAL = auto()
    PATHS = auto()


class DrbcEvent(StrEnum):
    """Event type for experiment callbacks."""

    ROW_EMITTED = auto()
    PROPERTY_CHECKED = auto()
    EXPERIMENT_FINISHED = auto()
