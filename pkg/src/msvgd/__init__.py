"""Particle-based variational inference with matrix-valued Stein kernels."""

from .errors import ConfigError, InvalidInputError, NumericalAbort
from .psdlin import PreconditionerBundle, mahalanobis_sq, make_bundle, psd_repair
from .targets import (
    DoubleBanana,
    Gaussian,
    LogisticDataset,
    LogisticPosterior,
    Sine,
    StarMixture,
    grid_moments,
    make_target,
)
from .kernels import (
    AnchorSet,
    ConstPrecond,
    DiagonalRBF,
    MixturePrecond,
    ScalarRBF,
    eval_kernel,
    gram_matrix,
    median_bandwidth,
    mixture_weights,
    stein_direction,
)
from .dynamics import (
    METHODS,
    ParticleSet,
    PrecondPolicy,
    RunResult,
    StepperState,
    adagrad_step,
    averaged_preconditioner,
    change_of_variables_directions,
    refresh_anchors,
    run,
    svn_direction,
    svn_metrics,
    svn_step,
)
from .metrics import MmdReport, mmd_sq, predictive_metrics
from .harness import RunConfig, RunRecord, compare, parse_config, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "ConfigError", "ConstPrecond", "DiagonalRBF", "DoubleBanana",
    "Gaussian", "InvalidInputError", "LogisticDataset", "LogisticPosterior",
    "METHODS", "MixturePrecond", "MmdReport", "NumericalAbort", "ParticleSet",
    "PrecondPolicy", "PreconditionerBundle", "RunConfig", "RunRecord",
    "RunResult", "ScalarRBF", "Sine", "StarMixture", "StepperState",
    "adagrad_step", "averaged_preconditioner", "change_of_variables_directions",
    "compare", "eval_kernel", "gram_matrix", "grid_moments", "mahalanobis_sq",
    "make_bundle", "make_target", "median_bandwidth", "mixture_weights",
    "mmd_sq", "parse_config", "predictive_metrics", "psd_repair",
    "refresh_anchors", "run", "run_experiment", "stein_direction",
    "svn_direction", "svn_metrics", "svn_step",
]
