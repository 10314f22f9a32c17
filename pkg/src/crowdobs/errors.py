"""Exception hierarchy shared by the compiled and pure-Python cores."""


class CrowdObsError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CrowdObsError, ValueError):
    """Invalid or inconsistent parameters."""


class InitializationError(CrowdObsError):
    """Could not place agents without overlap."""


class IntegrationError(CrowdObsError):
    """Overlap guard could not be satisfied within the step-halving budget.

    Attributes carry the offending pair and their distance so sweeps can log
    the fault without re-running.
    """

    def __init__(self, message, i=-1, j=-1, distance=float("nan"), frame=None):
        super().__init__(message)
        self.i = i
        self.j = j
        self.distance = distance
        self.frame = frame

    def with_frame(self, frame):
        err = IntegrationError(
            f"{self.args[0]} (frame {frame})", self.i, self.j, self.distance, frame
        )
        return err


class OverlapError(IntegrationError):
    """Two agents are at or inside contact distance."""


class GeometryError(CrowdObsError):
    """Degenerate input to the tessellation."""


class FitError(CrowdObsError):
    """Linear classifier fit received unusable data."""
