"""Exception hierarchy shared by all modules."""


class LrdError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(LrdError, ValueError):
    """An input violates a documented precondition."""


class TraceFormatError(LrdError, ValueError):
    """A stored trace file is malformed or truncated."""


class UnsupportedInversionError(LrdError, ValueError):
    """The requested inversion has no closed form for this sampling process."""


class AliasingError(UnsupportedInversionError):
    """Spectral inversion refused: periodic sampling folds the spectrum irreversibly."""


class DriverError(LrdError, RuntimeError):
    """A path driver failed while probing a given send slot."""

    def __init__(self, slot, cause):
        super().__init__(f"driver failed at send slot {slot}: {cause}")
        self.slot = slot
        self.cause = cause
