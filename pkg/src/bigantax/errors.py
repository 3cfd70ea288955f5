"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
``NumericError`` -> 3.
"""


class BiganTaxError(Exception):
    pass


class ConfigError(BiganTaxError, ValueError):
    """Invalid configuration or command-line usage."""


class DataError(BiganTaxError, ValueError):
    """Input data that cannot be used (bad files, bad values, bad lengths)."""


class ShapeError(DataError):
    """Array dimensions do not line up."""


class DomainError(DataError):
    """A value lies outside the domain of an operation."""


class StateError(BiganTaxError, RuntimeError):
    """An operation was called in the wrong order."""


class NumericError(BiganTaxError, ArithmeticError):
    """Training produced a non-finite value."""
