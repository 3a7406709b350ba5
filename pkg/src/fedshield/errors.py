"""Exception hierarchy shared by every fedshield module."""


class FedShieldError(Exception):
    """Base class for all errors raised by fedshield."""


class ConfigurationError(FedShieldError, ValueError):
    """Invalid shapes, lengths or parameter values."""


class DataError(FedShieldError, ValueError):
    """Dataset contents violate an invariant (bad label, missing class...)."""


class DatasetParseError(FedShieldError, ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateVectorError(FedShieldError, ValueError):
    """A parameter vector has (near) zero norm, so its direction is undefined."""


class DivergenceError(FedShieldError, RuntimeError):
    """Training produced a non-finite or exploding loss."""

    def __init__(self, message, round_index=None):
        self.round_index = round_index
        super().__init__(message)
