"""
Exception hierarchy shared by the fk-connectome-uq scripts.

ValidationError  -> bad input (schema, invariants, preconditions); CLI exit code 1
NumericalError   -> the numerics failed on valid input;           CLI exit code 2
"""

from __future__ import annotations


class FkuqError(Exception):
    """Base class for all errors raised by this project."""


class ValidationError(FkuqError, ValueError):
    """Input violates a documented precondition or invariant."""


class NumericalError(FkuqError, RuntimeError):
    """A numerical procedure failed on otherwise valid input."""


class ConnectomeError(ValidationError):
    pass


class FieldError(ValidationError):
    pass


class SolverError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class NegativeVarianceError(NumericalError):
    pass


class ModelEvaluationError(NumericalError):
    """The forward model failed (or returned non-finite values) at a parameter point."""

    def __init__(self, message: str, parameters=None):
        super().__init__(message)
        self.parameters = parameters
