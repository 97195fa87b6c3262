"""Adversarial-attack toolbox for small MLP classifiers: a sequential
difference maximization attack alongside standard gradient baselines, with
a verified analytic-gradient core and a compiled kernel backend."""

from . import backend
from .attacks import (
    AttackConfig,
    AttackOutcome,
    Schedule,
    fgsm,
    margin_pgd,
    pgd,
    run_attack,
    schedule_for_total_steps,
    sdm,
)
from .errors import (
    ConfigError,
    ContractViolationError,
    DegenerateSubspaceError,
    FormatError,
    NumericalError,
    SingularityError,
)
from .losses import DpdrContext, LossKind
from .models import DatasetSplit, MlpModel, TrainConfig, init_mlp, load_dataset, load_model, save_dataset, save_model, synth_dataset, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackOutcome",
    "ConfigError",
    "ContractViolationError",
    "DatasetSplit",
    "DegenerateSubspaceError",
    "DpdrContext",
    "FormatError",
    "LossKind",
    "MlpModel",
    "NumericalError",
    "Schedule",
    "SingularityError",
    "TrainConfig",
    "backend",
    "fgsm",
    "init_mlp",
    "load_dataset",
    "load_model",
    "margin_pgd",
    "pgd",
    "run_attack",
    "save_dataset",
    "save_model",
    "schedule_for_total_steps",
    "sdm",
    "synth_dataset",
    "train",
    "__version__",
]
