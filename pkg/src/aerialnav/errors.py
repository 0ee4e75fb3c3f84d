"""Exception hierarchy shared across the package."""


class NavError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(NavError, ValueError):
    pass


class PerceptionBackendError(NavError):
    def __init__(self, backend, message):
        super().__init__(f"[{backend}] {message}")
        self.backend = backend


class ScoringError(NavError):
    pass


class NoPathError(NavError):
    pass


class NoOroiError(NavError):
    pass


class NoPointsError(NavError):
    pass


class ParseError(NavError):
    """Raised when a structured response or document cannot be parsed.

    ``raw`` keeps the offending input, ``position`` the location of the
    failure (character offset or a JSON path) when known.
    """

    def __init__(self, message, raw=None, position=None):
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)
        self.raw = raw
        self.position = position


class GenerationError(NavError):
    pass


class BackendError(NavError):
    def __init__(self, message, retries=0):
        super().__init__(f"{message} after {retries} retries")
        self.retries = retries


class ConfigError(NavError):
    pass
