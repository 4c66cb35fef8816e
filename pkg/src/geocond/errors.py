"""Exception types shared across the package."""


class GeocondError(Exception):
    pass


class ShapeError(GeocondError, ValueError):
    pass


class DomainError(GeocondError, ValueError):
    pass


class UsageError(GeocondError, ValueError):
    pass


class FormatError(GeocondError, ValueError):
    """Raised when a binary file does not match its declared layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(GeocondError, ValueError):
    pass


class TrainingDivergedError(GeocondError, RuntimeError):
    pass
