import sys
from typing import Optional

from loguru import logger

from app.core.config import settings


def setup_logger(level: Optional[str] = None, log_file: Optional[str] = None):
    logger.remove()
    logger.add(sys.stderr, level=level or settings.LOG_LEVEL)
    logger.add(log_file or settings.LOG_FILE, rotation=settings.LOG_ROTATION, level="DEBUG")
