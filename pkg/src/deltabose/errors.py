"""Exception hierarchy shared across the package."""


class DeltaBoseError(Exception):
    """Base class for all errors raised by deltabose."""


class DomainError(DeltaBoseError, ValueError):
    """An argument lies outside the domain of a function."""


class AccuracyError(DeltaBoseError):
    """A numerical routine failed to reach its requested tolerance.

    The achieved error estimate is kept on ``achieved`` so callers can decide
    whether the value is still usable.
    """

    def __init__(self, msg, achieved=None, value=None):
        super().__init__(msg)
        self.achieved = achieved
        self.value = value


class TruncationError(AccuracyError):
    """A truncated series did not decay fast enough."""


class FittingError(DeltaBoseError):
    """A constant fit failed its post-fit audit."""


class PoleError(DeltaBoseError):
    """The contour integrand hit a zero of its denominator."""


class ResolutionError(DeltaBoseError):
    """A grid or time step is too coarse for the requested computation."""


class DegenerateEstimateError(DeltaBoseError):
    """Monte Carlo samples were all zero or contained non-finite values."""


class ShapeError(DeltaBoseError, ValueError):
    """Point or grid shapes are inconsistent with the operator."""
