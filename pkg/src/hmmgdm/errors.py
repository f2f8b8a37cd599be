"""Exception hierarchy for hmmgdm."""


class HmmGdmError(Exception):
    """Base class of every error raised by the package."""


# -- mesh -------------------------------------------------------------------

class MeshValidationError(HmmGdmError, ValueError):
    """A vertex/cell description does not define a valid polytopal mesh."""


class NonManifoldFace(MeshValidationError):
    pass


class DegenerateCell(MeshValidationError):
    pass


class InconsistentOrientation(MeshValidationError):
    pass


class UnsupportedLevel(HmmGdmError, ValueError):
    pass


class ParseError(HmmGdmError, ValueError):
    """Malformed mesh file.  ``lineno`` is 1-based, or None for EOF errors."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


# -- models / solver / metrics ---------------------------------------------

class InvalidLambda(HmmGdmError, ValueError):
    pass


class DimensionMismatch(HmmGdmError, ValueError):
    pass


class InvalidTimeGrid(HmmGdmError, ValueError):
    pass


class LinearSolveFailed(HmmGdmError, RuntimeError):
    pass


class PicardDiverged(HmmGdmError, RuntimeError):
    pass


class EigSolveFailed(HmmGdmError, RuntimeError):
    pass


class NonPositiveError(HmmGdmError, ValueError):
    pass


class StepFailed(HmmGdmError, RuntimeError):
    """Wraps a solver failure with the index of the time step that failed."""

    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"time step {step} failed: {cause}")
