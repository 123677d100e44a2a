"""
日志初始化
"""

import os
import sys
from typing import Optional

from loguru import logger

from .config import settings


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """安装 stderr 与文件两个 sink，命令行启动时调用一次"""
    level = level or settings.LOG_LEVEL
    log_file = log_file if log_file is not None else settings.LOG_FILE

    logger.remove()
    logger.add(
        sys.stderr,
        level=level,
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {name}:{line} - {message}",
    )

    if log_file:
        # 确保日志目录存在
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        logger.add(log_file, level=level, rotation=settings.LOG_ROTATION, encoding="utf-8")

    logger.debug(f"日志已初始化: level={level}, file={log_file or '-'}")
