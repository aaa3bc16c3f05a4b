"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: model/configuration problems
exit 2, numerical failures exit 3 (acceptance-gate violations exit 4 without a
dedicated exception).
"""


class QfptError(Exception):
    """Base class for package errors."""


class ModelError(QfptError):
    """Invalid model, operator, or configuration input."""


class ClosureError(ModelError):
    """Partition does not admit the closed one-variable overlap diffusion."""


class DivergenceError(QfptError):
    """Numerical integration diverged (e.g. trace blow-up); retry with smaller dt."""


class CensoringError(QfptError):
    """Too many trajectories hit the time horizon for trustworthy statistics."""


class TruncationError(QfptError):
    """Requested time is below the validity floor of the truncated spectral series."""
