from .config import config
from .logger import sea_logger, get_logger

__all__ = ["config", "sea_logger", "get_logger"]
