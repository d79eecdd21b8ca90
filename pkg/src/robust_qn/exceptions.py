"""
Exception hierarchy for the robust quasi-Newton simulator.

Hard failures raise one of these. Soft conditions (a machine whose local solver
did not converge, a skipped BFGS update, ridge regularization) are reported
through result flags and log warnings instead.
"""


class RobustQNError(Exception):
    """Base class for all simulator errors."""


class ConfigError(RobustQNError, ValueError):
    """Invalid or unknown configuration values."""


class DimensionMismatchError(RobustQNError, ValueError):
    """Array shapes that do not agree with the model or with each other."""


class InvalidDataError(RobustQNError, ValueError):
    """Responses outside the model's support (non-binary logistic labels, negative counts)."""


class NumericOverflowError(RobustQNError, ArithmeticError):
    """A loss, gradient or Hessian evaluation produced a non-finite value."""


class PrivacyDomainError(RobustQNError, ValueError):
    """Privacy parameters outside their domain (epsilon <= 0, delta not in (0, 1), ...)."""


class MissingNoiseScaleError(RobustQNError, KeyError):
    """A noise scale was requested for a round whose norm factors are not known yet."""


class ProtocolError(RobustQNError, RuntimeError):
    """The distributed protocol reached an inconsistent state."""


class IdxFormatError(RobustQNError, ValueError):
    """Malformed IDX container (bad magic, truncated payload, count mismatch)."""
