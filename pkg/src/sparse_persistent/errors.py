"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class FormatError(ValueError):
    """A layer or matrix file could not be decoded.

    ``offset`` is the byte offset of the offending field, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CorruptLayerError(FormatError):
    """Layer contents violate an invariant (index out of range, duplicates)."""

    def __init__(self, message, offset=None, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message, offset)
        self.row = row


class ScheduleMismatchError(ValueError):
    """A warp schedule was built for a different layer."""


class LivenessError(RuntimeError):
    """A consumer exhausted its poll budget waiting for a published value."""

    def __init__(self, message, element=None, timestep=None):
        super().__init__(message)
        self.element = element
        self.timestep = timestep


class ExecutorAborted(RuntimeError):
    """A worker failed and the run was torn down."""
