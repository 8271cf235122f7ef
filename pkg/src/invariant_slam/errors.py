"""Exception types shared across the toolkit."""


class FilterError(RuntimeError):
    """Base class for filter-runtime failures; may carry the offending step."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class NumericalFailureError(FilterError):
    """Covariance or state went non-finite."""


class DegenerateUpdateError(FilterError):
    """Innovation covariance is numerically singular."""


class UnknownSubjectError(KeyError):
    """Measurement references an id absent from the state."""


class DegenerateGeometryError(ValueError):
    """Observation geometry is singular (e.g. zero-range landmark)."""


class NotVisibleSignal(Exception):
    """A predicted measurement is not physically available; skip, not a failure."""


class CorruptDataError(ValueError):
    """Dataset file violates its format contract."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" [{path}" + (f":{line}]" if line is not None else "]")
        super().__init__(message + where)


class ConfigError(ValueError):
    """Invalid configuration file or CLI arguments."""
