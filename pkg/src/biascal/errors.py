"""Exception types shared across the package."""


class BiascalError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BiascalError):
    """Invalid configuration: bad keys, bad values, inconsistent setup."""


class DimensionMismatchError(BiascalError):
    """Coordinate dimensions do not match a kernel or model contract."""

    def __init__(self, message, node=None):
        if node is not None:
            message = f"{message} (kernel node: {node})"
        super().__init__(message)
        self.node = node


class FactorizationError(BiascalError):
    """Covariance factorization failed even after jitter escalation."""

    def __init__(self, message, hyperparameters=None):
        super().__init__(message)
        self.hyperparameters = dict(hyperparameters or {})


class ModelEvaluationError(BiascalError):
    """A forward model could not be evaluated at the requested point."""

    def __init__(self, message, theta=None, x=None):
        super().__init__(message)
        self.theta = theta
        self.x = x
