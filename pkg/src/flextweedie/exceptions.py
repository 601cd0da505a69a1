"""Exception hierarchy shared by all estimation engines."""


class TweedieError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(TweedieError):
    """Non-finite or otherwise malformed input."""


class NumericOverflow(TweedieError):
    """A computation would overflow; carries the offending row index."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SupportViolation(TweedieError):
    """Response outside the distribution support for the requested method.

    Carries the first offending observation index and the rule broken.
    """

    def __init__(self, message, index=None, rule=None):
        super().__init__(message)
        self.index = index
        self.rule = rule


class DomainError(TweedieError):
    """Parameter combination with no defined density."""


class SeriesNotConverged(TweedieError):
    """Density series hit the term cap; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CatastrophicCancellation(TweedieError):
    """Alternating series lost essentially all significant digits."""


class NonFiniteObjective(TweedieError):
    """Objective returned NaN/inf where a finite value is required."""


class IllConditioned(TweedieError):
    """Linear system too ill-conditioned to solve reliably."""


class DensityRegionUnstable(TweedieError):
    """Numeric derivative probes cross a density region boundary (p=1, p=2)."""


class NoConvergence(TweedieError):
    """Fit did not converge; carries the best-so-far result.

    The attached ``result`` (when present) is a FitResult with
    ``converged=False`` so callers can still inspect or report it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class UnsupportedPower(TweedieError):
    """Random-variate generation not implemented for this power."""


class ConfigError(TweedieError):
    """Malformed simulation-study configuration."""


class InsufficientReplicates(TweedieError):
    """Too few converged replicates for a reliable summary."""
