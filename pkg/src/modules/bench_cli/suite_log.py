"""
In-memory log for verification suites.

Entries are kept for the verify report and mirrored to the engine log.
"""
from datetime import datetime

from src.utils.logger import get_logger

logger = get_logger("verify")

_LEVELS = {"Info": logger.info, "Success": logger.info, "Warning": logger.warning, "Error": logger.error}


class SuiteLog:
    """
    Collects suite progress:
    - append(message, level)
    - set_status(message)
    - as_dict() -> {"entries": [...], "status": str}
    """

    def __init__(self):
        self._entries: list[dict] = []
        self._status: str = "Idle"

    def append(self, message: str, level: str = "Info") -> None:
        """
        Add a log entry.

        Args:
            message: Log message
            level: One of "Info", "Success", "Warning", "Error"
        """
        self._entries.append({
            "timestamp": datetime.now().isoformat(),
            "level": level,
            "message": message
        })
        _LEVELS.get(level, logger.info)(message)

    def set_status(self, message: str) -> None:
        self._status = message

    @property
    def status(self) -> str:
        return self._status

    def as_dict(self) -> dict:
        return {
            "entries": self._entries,
            "status": self._status
        }

    def get_errors(self) -> list[dict]:
        return [e for e in self._entries if e["level"] == "Error"]
