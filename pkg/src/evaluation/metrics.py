"""评估指标: 准确率-拒绝曲线、Spearman S、OOD ROC/PR、筛选排序

全部基于排序, 对不确定性分数的任意严格递增变换不变。
并列时按样本下标的稳定顺序处理 (下标小的先被拒绝 / 先被选出)。
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr
from sklearn.metrics import auc, average_precision_score, precision_recall_curve, roc_curve

from ..errors import InvalidInputError
from ..models.evaluation import (
    DEFAULT_REJECTION_GRID, EvalTable, OodReport, RankCorrelation, RejectionCurve,
    RocPrResult, SelectiveReport,
)
from ..models.score import ScoreLine, ScoreRecord

# ⌈r·n⌉ 之前减去的容差, 避免 0.05 × 1000 这类浮点误差多拒绝一个样本
CEIL_EPS = 1e-9


def rejected_count(fraction: float, n: int) -> int:
    return int(math.ceil(fraction * n - CEIL_EPS))


def _descending_order(uncertainty: np.ndarray) -> np.ndarray:
    return np.argsort(-uncertainty, kind="stable")


def _require_correctness(table: EvalTable) -> np.ndarray:
    if table.correctness is None:
        raise InvalidInputError("选择性分类评估需要 correctness 列")
    return table.correctness


def acc_at_rejection(table: EvalTable, r: float = 0.90) -> float:
    """拒绝最不确定的 ⌈r·n⌉ 个样本后剩余样本的准确率"""
    correct = _require_correctness(table)
    if not 0.0 <= r < 1.0:
        raise InvalidInputError(f"拒绝比例必须在 [0, 1) 内, 当前值: {r}")
    drop = rejected_count(r, table.n)
    kept = _descending_order(table.uncertainty)[drop:]
    if kept.size == 0:
        raise InvalidInputError(f"拒绝比例 {r} 下没有剩余样本 (n={table.n})")
    return float(correct[kept].mean())


def rejection_curve(
    table: EvalTable,
    grid: Sequence[float] = DEFAULT_REJECTION_GRID,
) -> RejectionCurve:
    correct = _require_correctness(table)
    fractions = np.asarray(grid, dtype=np.float64)
    order = _descending_order(table.uncertainty)
    accuracies = []
    for r in fractions:
        kept = order[rejected_count(float(r), table.n):]
        if kept.size == 0:
            raise InvalidInputError(f"拒绝比例 {r} 下没有剩余样本 (n={table.n})")
        accuracies.append(float(correct[kept].mean()))
    return RejectionCurve(fractions=fractions, accuracies=np.asarray(accuracies))


def spearman_s(curve: RejectionCurve) -> RankCorrelation:
    """拒绝比例与准确率之间的 Spearman 秩相关 (平均秩处理并列)"""
    if curve.fractions.size < 3:
        raise InvalidInputError("Spearman S 至少需要 3 个网格点")
    acc = curve.accuracies
    if np.all(acc == acc[0]):
        return RankCorrelation(value=0.0, degenerate=True)
    rho, _ = spearmanr(curve.fractions, acc)
    return RankCorrelation(value=float(rho))


def roc_pr(table: EvalTable) -> RocPrResult:
    """以不确定性为分数、OOD 为正类的 ROC 与 PR 曲线"""
    if table.ood_flag is None:
        raise InvalidInputError("OOD 评估需要 ood_flag 列")
    flags = table.ood_flag.astype(int)
    n_out = int(flags.sum())
    if n_out == 0 or n_out == flags.size:
        raise InvalidInputError("OOD 评估需要同时包含分布内和分布外样本")
    fpr, tpr, _ = roc_curve(flags, table.uncertainty)
    precision, recall, _ = precision_recall_curve(flags, table.uncertainty)
    return RocPrResult(
        fpr=fpr,
        tpr=tpr,
        auroc=float(auc(fpr, tpr)),
        precision=precision,
        recall=recall,
        aupr=float(average_precision_score(flags, table.uncertainty)),
    )


def curation_rank(scores: Sequence[ScoreRecord | ScoreLine], top_k: int) -> list[int]:
    """不确定性最高的 k 个样本下标, 降序, 并列按下标"""
    if top_k < 0 or top_k > len(scores):
        raise InvalidInputError(f"top_k 必须在 [0, {len(scores)}] 内, 当前值: {top_k}")
    if top_k == 0:
        return []
    u = np.array([s.uncertainty for s in scores], dtype=np.float64)
    ids = np.array([s.index for s in scores], dtype=np.int64)
    return [int(i) for i in ids[_descending_order(u)[:top_k]]]


def curation_count(fraction: float, n: int) -> int:
    """按比例选取时的数量 ⌈fraction·n⌉"""
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInputError(f"fraction 必须在 [0, 1] 内, 当前值: {fraction}")
    return min(n, rejected_count(fraction, n))


def evaluate_selective(
    table: EvalTable,
    grid: Sequence[float] = DEFAULT_REJECTION_GRID,
) -> SelectiveReport:
    curve = rejection_curve(table, grid)
    base = float(_require_correctness(table).mean())
    acc90 = acc_at_rejection(table, 0.90)
    return SelectiveReport(
        curve=curve,
        acc_at_90=acc90,
        spearman=spearman_s(curve),
        base_accuracy=base,
        extras={"acc_gain": acc90 - base},
    )


def evaluate_ood(table: EvalTable) -> OodReport:
    result = roc_pr(table)
    assert table.ood_flag is not None
    n_out = int(table.ood_flag.sum())
    return OodReport(roc_pr=result, n_in=table.n - n_out, n_out=n_out)


def aggregate_runs(values: Sequence[float]) -> dict[str, float]:
    """多个种子的均值 ± 标准差"""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError("aggregate_runs 需要至少一个值")
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        "n": int(arr.size),
    }
