"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class SignalLost(Exception):
    """Raised when a computation needs a received power but the link has none."""


class ScheduleError(ValueError):
    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)


class ConfigError(ValueError):
    pass


class DecodeError(ValueError):
    def __init__(self, oid, message):
        super().__init__(f"{oid}: {message}")
        self.oid = oid


class TraceFormatError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line
