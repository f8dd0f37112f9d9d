"""Exception hierarchy shared by every module."""


class CircSpaceError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CircSpaceError, ValueError):
    """An argument is outside its documented domain."""


class EmptyInputError(InvalidArgumentError):
    """A statistic was requested on an empty sample."""


class UndefinedDirectionError(CircSpaceError, ValueError):
    """The resultant vector is zero, so no direction exists."""


class FactorizationError(CircSpaceError, ArithmeticError):
    """A covariance matrix could not be factorized reliably."""


class InitializationError(CircSpaceError):
    """A sampler started from a state with non-finite log posterior."""


class ConfigError(InvalidArgumentError):
    """A run configuration failed validation."""


class IngestionError(InvalidArgumentError):
    """An input file could not be parsed into a site table."""
