"""评估表与曲线模型"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidInputError, ShapeMismatchError

# 默认拒绝比例网格: 0%-90%, 步长 5%
DEFAULT_REJECTION_GRID: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(19))


@dataclass
class EvalTable:
    """对齐的 (不确定性, 正确性/OOD 标记) 数组"""
    uncertainty: np.ndarray
    correctness: Optional[np.ndarray] = None     # 选择性分类: 1 = 预测正确
    ood_flag: Optional[np.ndarray] = None        # OOD 检测: 1 = 分布外
    sample_ids: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.uncertainty = np.asarray(self.uncertainty, dtype=np.float64).reshape(-1)
        n = self.uncertainty.shape[0]
        if not np.all(np.isfinite(self.uncertainty)):
            raise InvalidInputError("不确定性分数中存在 NaN/Inf")
        if self.correctness is not None:
            self.correctness = self._aligned(self.correctness, "correctness", n).astype(bool)
        if self.ood_flag is not None:
            self.ood_flag = self._aligned(self.ood_flag, "ood_flag", n).astype(bool)
        if self.sample_ids is None:
            self.sample_ids = np.arange(n, dtype=np.int64)
        else:
            self.sample_ids = self._aligned(self.sample_ids, "sample_ids", n).astype(np.int64)

    @staticmethod
    def _aligned(values: np.ndarray, name: str, n: int) -> np.ndarray:
        arr = np.asarray(values).reshape(-1)
        if arr.shape[0] != n:
            raise ShapeMismatchError(f"{name} 长度 {arr.shape[0]} 与不确定性长度 {n} 不一致")
        return arr

    @property
    def n(self) -> int:
        return int(self.uncertainty.shape[0])


@dataclass(frozen=True)
class RejectionCurve:
    """准确率-拒绝曲线"""
    fractions: np.ndarray
    accuracies: np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.diff(self.fractions) <= 0):
            raise InvalidInputError("拒绝比例网格必须严格递增")

    def as_rows(self) -> list[tuple[float, float]]:
        return [(float(f), float(a)) for f, a in zip(self.fractions, self.accuracies)]


@dataclass(frozen=True)
class RankCorrelation:
    """Spearman 秩相关; 常数序列时 value=0 且 degenerate=True"""
    value: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class RocPrResult:
    """OOD 检测的 ROC / PR 结果 (OOD 为正类)"""
    fpr: np.ndarray
    tpr: np.ndarray
    auroc: float
    precision: np.ndarray
    recall: np.ndarray
    aupr: float


@dataclass
class SelectiveReport:
    """选择性分类评估结果"""
    curve: RejectionCurve
    acc_at_90: float
    spearman: RankCorrelation
    base_accuracy: float
    extras: dict[str, float] = field(default_factory=dict)


@dataclass
class OodReport:
    """OOD 检测评估结果"""
    roc_pr: RocPrResult
    n_in: int
    n_out: int
