"""Multichannel source separation with local Gaussian models.

MNMF (per-source and shared templates), ILRMA and a CVAE-driven
generalized MVAE solver share one majorization-minimization core.
Hot per-bin kernels live in a compiled extension with a numpy fallback;
``lgmsep.backend_name`` reports which one is active.
"""
from ._backend import NAME as backend_name
from .errors import (
    ConfigError, FormatError, IllConditionedError, InvalidInputError, InvariantViolation,
    LgmsepError, SolverDivergenceError, TrainingDivergenceError,
)
from .ilrma_solver import IlrmaConfig, fit_ilrma
from .mnmf_solver import (
    FitResult, GmvaeConfig, MixtureObservation, MnmfConfig, fit_gmvae, fit_mnmf,
    neg_log_likelihood, reconstruct_sources,
)
from .neural import CvaeWeights, TrainConfig, TrainExample, train_cvae

__version__ = "0.1.0"

__all__ = [
    "backend_name", "ConfigError", "FormatError", "IllConditionedError", "InvalidInputError",
    "InvariantViolation", "LgmsepError", "SolverDivergenceError", "TrainingDivergenceError",
    "IlrmaConfig", "fit_ilrma", "FitResult", "GmvaeConfig", "MixtureObservation", "MnmfConfig",
    "fit_gmvae", "fit_mnmf", "neg_log_likelihood", "reconstruct_sources", "CvaeWeights",
    "TrainConfig", "TrainExample", "train_cvae",
]
