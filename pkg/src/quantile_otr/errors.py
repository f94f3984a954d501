"""Exception hierarchy; the CLI maps each family to an exit code."""


class QotrError(Exception):
    """Base class for all package errors."""


class ConfigError(QotrError):
    """Invalid configuration or arguments (exit code 2)."""


class DataError(QotrError, ValueError):
    """Malformed or out-of-domain input data (exit code 3)."""


class EstimatorError(QotrError):
    """An estimator failed to produce a result (exit code 4)."""


class ConvergenceError(EstimatorError):
    """Iterative fitter did not converge; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class SeparationError(EstimatorError):
    """Complete or quasi-complete separation in logistic regression."""
