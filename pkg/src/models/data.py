"""嵌入数据集模型"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..errors import ShapeMismatchError
from .geometry import Modality


@dataclass
class EmbeddingPairSet:
    """图文嵌入对 (训练用代理数据集)"""
    image: np.ndarray                # (n, d) float32
    text: np.ndarray                 # (n, d) float32

    def __post_init__(self) -> None:
        self.image = np.ascontiguousarray(self.image, dtype=np.float32)
        self.text = np.ascontiguousarray(self.text, dtype=np.float32)
        if self.image.ndim != 2 or self.image.shape != self.text.shape:
            raise ShapeMismatchError(
                f"图像侧 {self.image.shape} 与文本侧 {self.text.shape} 形状不一致"
            )
        if self.image.shape[0] < 1:
            raise ShapeMismatchError("样本对数量必须 >= 1")
        if self.image.shape[1] < 2:
            raise ShapeMismatchError(f"嵌入维度必须 >= 2, 当前值: {self.image.shape[1]}")

    @property
    def d(self) -> int:
        return int(self.image.shape[1])

    @property
    def n_pairs(self) -> int:
        return int(self.image.shape[0])

    def side(self, modality: Modality) -> np.ndarray:
        return self.image if modality is Modality.IMAGE else self.text


@dataclass
class LabeledEmbeddingSet:
    """带标签的评估嵌入集"""
    points: np.ndarray                           # (n, d) float32
    labels: np.ndarray                           # (n,) 类别或 OOD 标记
    correctness: Optional[np.ndarray] = None     # (n,) 1 = 下游预测正确

    def __post_init__(self) -> None:
        self.points = np.ascontiguousarray(self.points, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.points.ndim != 2 or self.points.shape[1] < 2:
            raise ShapeMismatchError(f"点集形状无效: {self.points.shape}")
        n = self.points.shape[0]
        if self.labels.shape[0] != n:
            raise ShapeMismatchError(f"labels 长度 {self.labels.shape[0]} 与点数 {n} 不一致")
        if self.correctness is not None:
            self.correctness = np.asarray(self.correctness, dtype=bool).reshape(-1)
            if self.correctness.shape[0] != n:
                raise ShapeMismatchError(
                    f"correctness 长度 {self.correctness.shape[0]} 与点数 {n} 不一致"
                )

    @property
    def d(self) -> int:
        return int(self.points.shape[1])

    @property
    def n(self) -> int:
        return int(self.points.shape[0])


class SyntheticKind(str, Enum):
    """合成分布类型"""
    VMF = "vmf"
    VMF_MIXTURE = "vmf_mixture"
    UNIFORM = "uniform"


class VmfComponent(BaseModel):
    """vMF 混合分量"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    mean: list[float]
    kappa: float = Field(ge=0.0)
    weight: float = Field(default=1.0, gt=0.0)

    @field_validator("mean")
    @classmethod
    def _normalize_mean(cls, mean: list[float]) -> list[float]:
        norm = float(np.linalg.norm(mean))
        if abs(norm - 1.0) > 1e-2:
            raise ValueError(f"mean 必须是单位向量, 当前范数 {norm:.4f}")
        return [float(x) / norm for x in mean]

    def mean_array(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=np.float64)


class SyntheticSpec(BaseModel):
    """合成球面数据描述"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: SyntheticKind
    d: int = Field(ge=2)
    components: list[VmfComponent] = Field(default_factory=list)
    count: int = Field(ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_components(self) -> SyntheticSpec:
        if self.kind is SyntheticKind.UNIFORM:
            return self
        if not self.components:
            raise ValueError(f"{self.kind.value} 至少需要一个 components 分量")
        if self.kind is SyntheticKind.VMF and len(self.components) != 1:
            raise ValueError("vmf 只能有一个分量, 多分量请使用 vmf_mixture")
        for i, comp in enumerate(self.components):
            if len(comp.mean) != self.d:
                raise ValueError(f"components[{i}].mean 维度 {len(comp.mean)} 与 d={self.d} 不一致")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"components 的 weight 之和必须为 1, 当前为 {total:.6f}")
        return self

    @property
    def weights(self) -> np.ndarray:
        if self.kind is SyntheticKind.UNIFORM:
            return np.ones(1)
        return np.asarray([c.weight for c in self.components], dtype=np.float64)
