from .config import ExperimentConfig, Report, config_from_dict, load_config
from .experiments import (
    EstimatorDisagreement,
    ValidationFailure,
    run_experiment,
    validate_model,
)
from .plotting import emit_plot_data

__all__ = [
    "ExperimentConfig",
    "Report",
    "config_from_dict",
    "load_config",
    "EstimatorDisagreement",
    "ValidationFailure",
    "run_experiment",
    "validate_model",
    "emit_plot_data",
]
