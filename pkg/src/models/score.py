"""评分结果模型"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from ..errors import FileFormatError
from .geometry import Modality, SpherePoint


@dataclass(frozen=True)
class ScoreRecord:
    """单个样本的认知不确定性评分

    uncertainty = -log_density
    log_density = log_uniform_density(d) - divergence_integral
    """
    uncertainty: float               # U_ep, nats
    log_density: float               # log p_1(z | c), nats
    divergence_integral: float       # 沿反向轨迹累积的散度积分, nats
    terminal_point: SpherePoint      # 积分终点 (基分布一侧)
    steps_used: int
    probes_per_step: int
    index: int = -1
    modality: Modality = Modality.IMAGE

    def to_line_record(self) -> dict[str, object]:
        """评分文件中的一行 (列顺序固定)"""
        return {
            "index": self.index,
            "modality": int(self.modality),
            "uncertainty": self.uncertainty,
            "log_density": self.log_density,
            "steps": self.steps_used,
            "probes": self.probes_per_step,
        }


@dataclass(frozen=True)
class ScoreLine:
    """从评分文件读回的一行"""
    index: int
    modality: Modality
    uncertainty: float
    log_density: float
    steps: int
    probes: int

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> ScoreLine:
        try:
            return cls(
                index=int(record["index"]),
                modality=Modality(int(record["modality"])),
                uncertainty=float(record["uncertainty"]),
                log_density=float(record["log_density"]),
                steps=int(record["steps"]),
                probes=int(record["probes"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FileFormatError(f"评分记录格式错误: {record!r}") from e
