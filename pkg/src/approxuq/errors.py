"""Exception hierarchy shared by all approxuq modules."""


class ApproxUQError(Exception):
    """Base class for every error raised by approxuq."""


class InvalidParameterError(ApproxUQError, ValueError):
    """A parameter vector or hyperparameter falls outside its support."""


class DegenerateDimensionError(ApproxUQError, ValueError):
    """A predictor dimension cannot be rescaled onto the unit interval."""


class NumericalError(ApproxUQError, ArithmeticError):
    """Weights or densities became non-finite."""


class NonConvergenceError(ApproxUQError, RuntimeError):
    """The tempering loop failed to reach the next posterior."""


class CheckpointError(ApproxUQError):
    """A checkpoint stream is corrupt or was written by another format version."""


class CheckpointVersionError(CheckpointError):
    pass


class ConfigError(ApproxUQError, ValueError):
    pass


class DataFileError(ApproxUQError, ValueError):
    """Malformed delimited data; the message carries the row/column address."""
