"""Exception hierarchy shared by all modules."""


class EPCBALError(Exception):
    """Base class for library errors."""


class InvalidCovarianceError(EPCBALError, ValueError):
    """Covariance (or precision) matrix is not symmetric positive definite."""


class InvalidHalfspaceError(EPCBALError, ValueError):
    """Halfspace normal vector is zero or non-finite."""


class DegenerateTruncationError(EPCBALError):
    """Truncated mass is too close to 0 (or 1) for reliable moments.

    The offending mass is kept on the instance so callers can tell an
    uninformative truncation (mass near 1) from a conflicting one.
    """

    def __init__(self, mass, message=None):
        self.mass = float(mass)
        super().__init__(message or f"degenerate truncation (mass={mass:.3e})")


class InvalidProbeError(EPCBALError, ValueError):
    """Probe power vector is negative, zero or non-finite."""


class CavityError(EPCBALError):
    """Cavity distribution is not positive definite."""


class InvalidStateError(EPCBALError):
    """Total site precision is not positive definite."""


class DegeneratePosteriorError(EPCBALError):
    """Posterior variance along a probe direction is zero."""


class ProbeDesignError(EPCBALError):
    """No valid probe found within the redraw budget."""


class HorizonExhaustedError(EPCBALError, ValueError):
    """Step index lies outside the probing horizon."""


class InfeasibleRegionError(EPCBALError):
    """Sampler could not find any point inside the polytope."""
