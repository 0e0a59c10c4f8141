"""Self-balanced dropout: a dropped unit is replaced by a trainable value
instead of zero, with closed-form expectations, oracles and small experiments."""

from .closedform import (RegressionInstance, enumerate_expectation, expected_objective_sb_exact,
                         expected_objective_sb_paper, expected_objective_standard, grad_sb,
                         monte_carlo_expectation)
from .config import ConfigError, ExperimentConfig, config_from_dict, parse_config
from .dropout import Dropout, DropoutSpec, self_balanced_forward, standard_dropout_forward
from .experiments import compare_generalization, run_training
from .tensor import RngState

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Dropout", "DropoutSpec", "ExperimentConfig", "RegressionInstance", "RngState",
    "compare_generalization", "config_from_dict", "enumerate_expectation",
    "expected_objective_sb_exact", "expected_objective_sb_paper", "expected_objective_standard",
    "grad_sb", "monte_carlo_expectation", "parse_config", "run_training",
    "self_balanced_forward", "standard_dropout_forward",
]
