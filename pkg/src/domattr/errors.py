"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so the split matters: config
problems must be distinguishable from bad data and from numerical failures.
"""


class DomattrError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DomattrError, ValueError):
    """Operands have incompatible or invalid dimensions (includes windowing)."""


class InputError(DomattrError, ValueError):
    """Numerically invalid input: non-finite entries, asymmetric Gram, etc."""


class SingularityError(DomattrError, ArithmeticError):
    """A factorization failed; the system is singular or indefinite."""


class ConfigError(DomattrError, ValueError):
    """Invalid configuration or hyperparameter value."""


class DataError(DomattrError, ValueError):
    """Dataset problem: parse, schema, validation, size, or IO failure."""


class DivergenceError(DomattrError, RuntimeError):
    """The training objective became non-finite."""
