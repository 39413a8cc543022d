"""
Error types shared by every pipeline stage.
"""
from typing import Any, Dict, List, Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class DmfiError(Exception):
    """Base error carrying the CLI exit code for its category"""
    exit_code: int = EXIT_DATA

    def __init__(self, message: str, exit_code: Optional[int] = None):
        super().__init__(message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code

    def to_dict(self) -> Dict[str, Any]:
        """Return a structured error record for machine consumers"""
        return {
            "success": False,
            "error": True,
            "message": self.message,
            "exit_code": self.exit_code,
        }

    def __str__(self):
        return self.message


class UsageError(DmfiError):
    exit_code = EXIT_USAGE


class DataError(DmfiError):
    exit_code = EXIT_DATA


class BackendError(DmfiError):
    exit_code = EXIT_BACKEND


class EventValidationError(DataError):
    """Raised when an event violates one or more EventRecord invariants"""

    def __init__(self, violations: List[str], where: str = ""):
        self.violations = list(violations)
        prefix = f"{where}: " if where else ""
        super().__init__(prefix + "; ".join(self.violations))


class IngestError(DataError):
    pass


class SplitError(DataError):
    pass


class ViewError(DataError):
    pass


class PromptError(DataError):
    pass


class ResponseParseError(DataError):
    pass


class FusionError(DataError):
    pass


class MetricsError(DataError):
    pass
