"""Exception types shared across the package."""
from __future__ import annotations


class BiofilmcalError(Exception):
    """Base class for all package errors."""


class DomainError(BiofilmcalError, ValueError):
    """An internal variable left the open interval (0, 1)."""


class DimensionError(BiofilmcalError, ValueError):
    """Array arguments have inconsistent shapes."""


class NonConvergence(BiofilmcalError, RuntimeError):
    """Newton iteration exceeded its iteration budget.

    Attributes
    ----------
    residual_norm : float
        Max-norm of the residual at the final iterate.
    step_index : int | None
        1-based time-step index, when raised inside a simulation.
    order : int | None
        0 for the base solve, 1 for a sensitivity solve.
    param_index : int | None
        Index of the perturbation parameter, for sensitivity solves.
    """

    def __init__(self, message, residual_norm=float("nan"), step_index=None,
                 order=None, param_index=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.step_index = step_index
        self.order = order
        self.param_index = param_index


class DomainEscape(BiofilmcalError, RuntimeError):
    """A Newton iterate left (0, 1) and backtracking could not recover."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class DegenerateVariance(BiofilmcalError, ValueError):
    """A variance required to be positive was (numerically) zero."""


class SingularCovariance(BiofilmcalError, ValueError):
    """A covariance matrix stayed singular after regularization."""


class StageStall(BiofilmcalError, RuntimeError):
    """The tempering schedule stopped making progress before beta reached 1."""

    def __init__(self, message, beta_reached=0.0):
        super().__init__(message)
        self.beta_reached = beta_reached


class ConfigError(BiofilmcalError, ValueError):
    """Invalid configuration document.

    ``json_path`` names the offending location, e.g. ``sim.dt``.
    """

    def __init__(self, message, json_path=""):
        super().__init__(f"{json_path}: {message}" if json_path else message)
        self.json_path = json_path


class DatasetFormatError(BiofilmcalError, ValueError):
    """Malformed dataset file; carries the 1-based line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number
