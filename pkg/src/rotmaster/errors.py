"""Exception hierarchy shared by the library and the command line front end."""


class RotmasterError(Exception):
    """Base class for all errors raised by rotmaster."""


class ValidationError(RotmasterError, ValueError):
    """Invalid configuration or arguments. ``path`` names the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class TruncationError(ValidationError):
    """Requested state does not fit into the truncated rotational basis."""


class NumericalAbort(RotmasterError):
    """A run was stopped because a monitored numerical invariant failed.

    ``time`` is the first output time at which the violation was seen.
    """

    kind = "numerical"

    def __init__(self, message, time=None, value=None):
        self.time = time
        self.value = value
        super().__init__(message)

    def record(self):
        return {"error": self.kind, "message": str(self), "time": self.time, "value": self.value}


class LeakageError(NumericalAbort):
    kind = "leakage"


class TraceDriftError(NumericalAbort):
    kind = "trace_drift"


class PositivityError(NumericalAbort):
    kind = "positivity"
