"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or problem construction arguments."""


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class DivergenceError(ArithmeticError):
    """A non-finite value appeared during an iterative computation.

    ``last_row`` holds the last finite trace row (if any) and ``trace``
    the partial trace collected before the failure, so callers can still
    persist what was computed.
    """

    def __init__(self, message, last_row=None, trace=None):
        super().__init__(message)
        self.last_row = last_row
        self.trace = list(trace) if trace is not None else []
