"""Exception types shared across the package."""


class StHawkesError(Exception):
    """Base class for all sthawkes errors."""


class NonStationaryError(StHawkesError):
    """The influence matrix is supercritical (spectral radius >= decay rate)."""


class NegativeEntryError(StHawkesError):
    """An influence-strength entry is negative."""


class BadScaleError(StHawkesError):
    """A rate or scale parameter is non-positive."""


class NonFiniteError(StHawkesError):
    """NaN or Inf encountered in a numeric input or result."""


class NoConvergenceError(StHawkesError):
    """An iterative method did not converge within its iteration budget."""


class EventAfterTauError(StHawkesError):
    """A history event lies after the requested evaluation time."""


class TimeBeforeTauError(StHawkesError):
    """A post-intervention quantity was requested before the intervention time."""


class ZeroBaselineError(StHawkesError):
    """Reduction metrics requested against a zero baseline."""


class BudgetNegativeError(StHawkesError):
    """Intervention budget is negative."""


class InfeasiblePlanError(StHawkesError):
    """Intervention plan violates its budget constraint or parameter bounds."""


class TooFewEventsError(StHawkesError):
    """Not enough events to run the estimator."""


class NoImprovementError(StHawkesError):
    """Log-likelihood decreased beyond slack during fitting."""


class MissingColumnError(StHawkesError):
    """A required CSV column is absent."""


class EmptyFileError(StHawkesError):
    """The input file contains no data rows."""


class UnknownAreaError(StHawkesError):
    """A record references an area id absent from the area index."""


class IoFailureError(StHawkesError):
    """Failed to write an output file."""
