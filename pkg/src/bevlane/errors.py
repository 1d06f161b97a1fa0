"""Exception types shared across the package.

Everything that indicates bad user input or geometrically impossible data
derives from LaneError (a ValueError), so callers can catch one base class.
Numeric failures of iterative procedures derive from NumericError instead:
they mean the computation was well posed but did not succeed.
"""


class LaneError(ValueError):
    """Base class for validation and geometry errors."""


class DegenerateProjectionError(LaneError):
    """3D point at or above the camera height; flat-ground projection undefined."""


class NoGroundIntersectionError(LaneError):
    """Pixel ray at or above the horizon never meets the ground plane."""


class BehindCameraError(LaneError):
    """Point lies behind the camera's image plane."""


class InvalidLaneError(LaneError):
    """Polyline violates lane invariants (too short, y not increasing, non-finite)."""


class DegenerateSegmentError(LaneError):
    """Zero-length segment where a direction is required."""


class InsufficientPointsError(LaneError):
    """Too few points or lanes for the requested estimate."""


class InvalidSpecError(LaneError):
    """Scene or grid specification is internally inconsistent."""


class InvalidInputError(LaneError):
    """Numeric input outside the documented domain."""


class NumericError(RuntimeError):
    """Base class for failures of iterative numeric procedures."""


class IllConditionedError(NumericError):
    """Problem too degenerate to solve (e.g. all lane pairs nearly coincident)."""


class DivergedError(NumericError):
    """Iteration diverged; carries the loss trace seen so far."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
