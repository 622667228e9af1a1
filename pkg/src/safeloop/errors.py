"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """Bad scenario setup: dimension mismatch, missing parameter, invalid range."""


class NumericError(RuntimeError):
    """Numerical failure: singular innovation covariance, non-convergent synthesis."""
