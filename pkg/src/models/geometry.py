"""球面几何基本类型"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Union

import numpy as np

from ..errors import InvalidInputError, ShapeMismatchError

# 单位范数容差
UNIT_NORM_TOL = 1e-9
# 切向条件容差 (相对于向量长度)
TANGENT_TOL = 1e-9


class Modality(IntEnum):
    """条件模态, 序列化为 0/1"""
    IMAGE = 0                        # 图像嵌入
    TEXT = 1                         # 文本嵌入

    @classmethod
    def parse(cls, value: Union[str, int, "Modality"]) -> Modality:
        """解析 "image"/"text"/0/1"""
        if isinstance(value, Modality):
            return value
        if isinstance(value, (int, np.integer)):
            if int(value) in (0, 1):
                return cls(int(value))
            raise InvalidInputError(f"modality 必须是 0 或 1, 当前值: {value}")
        text = str(value).strip().lower()
        mapping = {"image": cls.IMAGE, "img": cls.IMAGE, "0": cls.IMAGE,
                   "text": cls.TEXT, "txt": cls.TEXT, "1": cls.TEXT}
        if text not in mapping:
            raise InvalidInputError(f"无法识别的 modality: {value!r}")
        return mapping[text]

    @property
    def label(self) -> str:
        return "image" if self is Modality.IMAGE else "text"


@dataclass(frozen=True, eq=False)
class SpherePoint:
    """S^(d-1) 上的点, 构造时重新归一化"""
    coords: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.coords, dtype=np.float64).reshape(-1)
        if arr.shape[0] < 2:
            raise InvalidInputError(f"球面维度 d 必须 >= 2, 当前值: {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("球面点坐标包含 NaN/Inf")
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise InvalidInputError("零向量无法归一化到球面")
        arr = arr / norm
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)

    @classmethod
    def from_array(cls, values: np.ndarray) -> SpherePoint:
        return cls(np.asarray(values, dtype=np.float64))

    @property
    def dim(self) -> int:
        return int(self.coords.shape[0])

    def as_array(self) -> np.ndarray:
        return np.array(self.coords)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpherePoint):
            return NotImplemented
        return bool(np.array_equal(self.coords, other.coords))

    def __hash__(self) -> int:
        return hash(self.coords.tobytes())


@dataclass(frozen=True, eq=False)
class TangentVector:
    """切空间 T_z S^(d-1) 中的向量"""
    base: SpherePoint
    vec: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.vec, dtype=np.float64).reshape(-1)
        if arr.shape[0] != self.base.dim:
            raise ShapeMismatchError(
                f"切向量维度 {arr.shape[0]} 与基点维度 {self.base.dim} 不一致"
            )
        inner = abs(float(arr @ self.base.coords))
        if inner > TANGENT_TOL * (1.0 + float(np.linalg.norm(arr))):
            raise InvalidInputError(f"向量不在切空间中: <vec, base> = {inner:.3e}")
        arr.setflags(write=False)
        object.__setattr__(self, "vec", arr)

    @property
    def dim(self) -> int:
        return self.base.dim

    def norm(self) -> float:
        return float(np.linalg.norm(self.vec))
