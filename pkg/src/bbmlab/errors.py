"""Exception types shared across the package."""


class BBMLabError(Exception):
    """Base class for all package errors."""


class InvalidInputError(BBMLabError, ValueError):
    pass


class DomainError(BBMLabError, ValueError):
    pass


class RegimeError(BBMLabError, ValueError):
    """Operation requested outside the regime where it is defined."""


class ConfigurationError(BBMLabError, ValueError):
    pass


class CoverageError(BBMLabError):
    """A solution field or profile does not cover the requested window."""


class SchemeError(BBMLabError):
    """A numerical scheme produced output violating a structural invariant."""


class PrecisionError(BBMLabError):
    pass


class CappedRunError(BBMLabError):
    """Population cap exceeded. ``partial`` carries the statistics gathered so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class IntegrityError(BBMLabError):
    pass
