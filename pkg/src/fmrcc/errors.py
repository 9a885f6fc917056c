"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data are malformed, inconsistent, or degenerate."""


class RankDeficientError(DataError):
    """A least-squares system has no unique solution."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values."""


class FitError(RuntimeError):
    """Model fitting failed for every attempted start or candidate."""
