import copy

class TrackingError(Exception):
    pass

class UsageError(TrackingError, ValueError):
    pass

class ConfigError(UsageError):
    pass

class UndefinedMetricError(TrackingError):
    pass

class DataIntegrityError(TrackingError):
    pass

class ParseError(DataIntegrityError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line

        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "

        super().__init__(f"{location}{message}")

class IntegrityError(DataIntegrityError):
    pass

def with_context(exc: TrackingError, context: str) -> TrackingError:
    """
    Copy a tracking error with its message prefixed by `context`,
    keeping its type (and so its CLI exit code).
    """
    wrapped = copy.copy(exc)
    wrapped.args = (f"{context}: {exc}",)
    return wrapped
