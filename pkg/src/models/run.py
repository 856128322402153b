"""运行清单模型"""

from __future__ import annotations

import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any

from .. import __version__


@dataclass
class RunManifest:
    """每个输出文件旁边原子写入的运行清单"""
    command: str
    config: dict[str, Any] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    seed: int = 0
    engine_version: str = __version__
    platform: str = field(default_factory=platform.platform)
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: str = ""
    wall_seconds: float = 0.0
    # 输出文件校验和, 用于确定性比对
    checksums: dict[str, str] = field(default_factory=dict)
    # 原始命令行参数, replay 据此重跑
    argv: list[str] = field(default_factory=list)
    extras: dict[str, Any] = field(default_factory=dict)

    def finish(self, wall_seconds: float) -> None:
        self.finished_at = datetime.now(timezone.utc).isoformat()
        self.wall_seconds = round(wall_seconds, 3)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)
