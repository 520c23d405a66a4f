"""Exception types raised by covfluct."""


class CovfluctError(Exception):
    """Base class for all package errors."""


class DomainError(CovfluctError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class QuadratureError(CovfluctError, ArithmeticError):
    """Adaptive quadrature exhausted its budget before meeting tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(message)
        self.achieved = achieved


class EigenError(CovfluctError, ArithmeticError):
    """An eigensolver or factorization failed."""


class ConfigError(CovfluctError, ValueError):
    """A run configuration is malformed or inconsistent."""
