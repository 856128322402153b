"""配置管理模块"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import InvalidInputError

load_dotenv()


def _optional_path(raw: str) -> Optional[Path]:
    return Path(raw) if raw.strip() else None


@dataclass(frozen=True)
class LogConfig:
    """日志配置"""
    level: str = field(default_factory=lambda: os.getenv("LOG_LEVEL", "INFO"))
    # 为空时不写日志文件
    file: Optional[Path] = field(default_factory=lambda: _optional_path(os.getenv("LOG_FILE", "")))


class RuntimeConfig(BaseModel):
    """运行时配置, 字段别名即环境变量名"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    # --threads 未指定时的并行度
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1, alias="SPHEREFLOW_THREADS")

    # 评分时每个分块的样本数，与线程数无关，保证结果与并行度无关
    score_chunk: int = Field(default=64, ge=1, alias="SPHEREFLOW_SCORE_CHUNK")


def load_runtime_config() -> RuntimeConfig:
    """从环境变量读取运行时配置, 非法值抛出 InvalidInputError (退出码 2)"""
    raw: dict[str, str] = {}
    for info in RuntimeConfig.model_fields.values():
        name = info.alias or ""
        value = os.getenv(name, "").strip()
        if name and value:
            raw[name] = value
    try:
        return RuntimeConfig.model_validate(raw)
    except ValidationError as e:
        problems = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
        raise InvalidInputError("环境变量配置非法 - " + "; ".join(problems)) from e


@dataclass(frozen=True)
class AppConfig:
    """应用总配置"""
    log: LogConfig = field(default_factory=LogConfig)

    @property
    def runtime(self) -> RuntimeConfig:
        # 每次访问重新读取环境变量
        return load_runtime_config()


# 全局配置实例
config = AppConfig()
