"""Calibration of multi-species biofilm growth models under hybrid
(aleatory + epistemic) uncertainty.

Subpackage map: :mod:`~biofilmcal.solver` deterministic forward model,
:mod:`~biofilmcal.rom` time-separated sensitivity surrogate,
:mod:`~biofilmcal.inference` likelihoods and transitional MCMC,
:mod:`~biofilmcal.pbox` probability boxes, :mod:`~biofilmcal.dataset`
synthetic data, :mod:`~biofilmcal.pipeline` staged calibration plans,
:mod:`~biofilmcal.cli` command-line front end.
"""
from .errors import (BiofilmcalError, ConfigError, DatasetFormatError,
                     DegenerateVariance, DimensionError, DomainError,
                     DomainEscape, NonConvergence, SingularCovariance,
                     StageStall)
from .kernels import BACKEND_NAME, available_backends
from .model import (Environment, EnvAt, MaterialParams, ParamSet, Schedule,
                    SimConfig, State, Trajectory, initial_state)
from .solver import residual, simulate, step

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BACKEND_NAME",
    "available_backends",
    "BiofilmcalError", "ConfigError", "DatasetFormatError",
    "DegenerateVariance", "DimensionError", "DomainError", "DomainEscape",
    "NonConvergence", "SingularCovariance", "StageStall",
    "Environment", "EnvAt", "MaterialParams", "ParamSet", "Schedule",
    "SimConfig", "State", "Trajectory", "initial_state",
    "residual", "simulate", "step",
]
