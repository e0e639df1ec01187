"""
Exception hierarchy shared by the construction modules, the CLI and the server.
"""


class SewnSpaceError(Exception):
    """Base class for every error raised by sewnspace."""

    exit_code: int = 1


class ParameterError(SewnSpaceError, ValueError):
    """A parameter violates the precondition of the operation it was passed to."""

    exit_code = 2


class ConstructionError(SewnSpaceError, RuntimeError):
    """A numerical construction could not be completed for valid parameters."""

    exit_code = 3


class AcceptanceError(SewnSpaceError):
    """Artifacts were produced but their acceptance check failed."""

    exit_code = 4

    def __init__(self, message: str, checks: dict | None = None):
        super().__init__(message)
        self.checks = checks or {}
