"""stochgrad-lab - numerical experiments on stochastic gradient and Robbins-Monro recursions."""

from stochgrad_lab.analysis import (
    check_angle,
    distribution_test,
    estimate_lojasiewicz,
    fit_discrete_log_rate,
    fit_flow_rate,
    repulsion_experiment,
)
from stochgrad_lab.apt import error_rate, interpolate, limit_set_estimate
from stochgrad_lab.config import ExperimentConfig, ExperimentKind, LabSettings, load_config
from stochgrad_lab.errors import ConfigurationError, LabError, NumericalFailure
from stochgrad_lab.experiments import run_experiment
from stochgrad_lab.flow import expansion_rate, flow_map, resolvent_test, variational_flow
from stochgrad_lab.logging_config import setup_logging
from stochgrad_lab.shadowing import find_shadow, r_norm, shadow_decay_check
from stochgrad_lab.spectrum import critical_spectrum, set_spectrum, spectral_condition
from stochgrad_lab.stochastic import (
    NoiseModel,
    StepSchedule,
    polya_urn,
    run_robbins_monro,
    run_sgd,
)
from stochgrad_lab.vectorfield import (
    CriticalSetSample,
    GradientLikeSystem,
    Potential,
    catalog_critical_set,
    catalog_system,
)

__all__ = [
    # Systems
    "Potential",
    "GradientLikeSystem",
    "CriticalSetSample",
    "catalog_system",
    "catalog_critical_set",
    # Flow
    "flow_map",
    "variational_flow",
    "resolvent_test",
    "expansion_rate",
    # Spectrum
    "critical_spectrum",
    "set_spectrum",
    "spectral_condition",
    # Recursions
    "StepSchedule",
    "NoiseModel",
    "run_sgd",
    "run_robbins_monro",
    "polya_urn",
    # Pseudo-trajectories
    "interpolate",
    "error_rate",
    "limit_set_estimate",
    # Shadowing
    "r_norm",
    "find_shadow",
    "shadow_decay_check",
    # Analysis
    "estimate_lojasiewicz",
    "check_angle",
    "fit_flow_rate",
    "fit_discrete_log_rate",
    "repulsion_experiment",
    "distribution_test",
    # Experiments
    "ExperimentConfig",
    "ExperimentKind",
    "LabSettings",
    "load_config",
    "run_experiment",
    # Errors and logging
    "LabError",
    "ConfigurationError",
    "NumericalFailure",
    "setup_logging",
]

__version__ = "0.1.0"
