class FemAccessError(Exception):
    """Base class for pipeline errors."""

    reason = "error"


class ValidationError(FemAccessError, ValueError):
    reason = "validation"


class DegenerateGeometryError(FemAccessError, ValueError):
    reason = "degenerate geometry"


class InsufficientExtentError(FemAccessError, ValueError):
    reason = "insufficient extent"


class PipelineError(FemAccessError, RuntimeError):
    def __init__(self, message, reason="pipeline"):
        super().__init__(message)
        self.reason = reason


class TargetLostError(FemAccessError, RuntimeError):
    reason = "target lost"
