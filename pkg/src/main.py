"""主程序入口"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from .config import config


def setup_logging(level: Optional[str] = None, log_file: Optional[Path] = None) -> None:
    """配置日志: 进度与诊断只写 stderr, 可选滚动日志文件"""
    # 移除默认处理器
    logger.remove()

    level = (level or config.log.level).upper()
    logger.add(
        sys.stderr,
        level=level,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
    )

    log_file = log_file or config.log.file
    if log_file is None:
        return
    log_file.parent.mkdir(parents=True, exist_ok=True)
    logger.add(
        str(log_file),
        level=level,
        rotation="10 MB",
        retention="7 days",
        compression="zip",
    )


def main() -> None:
    """主函数"""
    from .cli import main as cli_main

    sys.exit(cli_main())


if __name__ == "__main__":
    main()
