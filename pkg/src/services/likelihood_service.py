"""似然服务 - 反向 ODE 积分与认知不确定性评分

从 t=1 的嵌入点出发, 以 Δt = 1/K 做 K 步黎曼 Euler 反向积分
(每步先在当前点估计散度再移动, 移动后归一化回球面), 累积散度积分:

    log p₁(z | c) = log p₀(z₀) - ∫ div v dt,    U_ep = -log p₁(z | c)

散度为切空间迹 tr(Π J Π): Hutchinson 模式用投影后的探针做随机估计,
exact 模式对 d 个投影基向量逐一求方向导数。
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from loguru import logger

from ..config import config
from ..errors import BatchScoringError, NumericalError, ShapeMismatchError, SphereFlowError
from ..geometry.sphere import log_uniform_density, normalize_rows
from ..models.flow import DivergenceMode, GeometryMode, IntegratorConfig, ProbeDistribution
from ..models.geometry import Modality, SpherePoint
from ..models.score import ScoreRecord
from ..network.field_net import FieldParams, batch_input_vjp, score_flops


# ========== 探针 ==========

def draw_probes(
    distribution: ProbeDistribution,
    shape: tuple[int, ...],
    rng: np.random.Generator,
) -> np.ndarray:
    if distribution is ProbeDistribution.RADEMACHER:
        return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    return rng.standard_normal(shape)


def _project_rows(z: np.ndarray, e: np.ndarray) -> np.ndarray:
    return e - np.sum(e * z, axis=-1, keepdims=True) * z


# ========== 散度 ==========

def batch_divergence(
    params: FieldParams,
    z: np.ndarray,
    t: float,
    c: np.ndarray,
    icfg: IntegratorConfig,
    probes: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """逐行散度估计与该点处的速度

    probes: (M, n, d) 原始探针, 仅 hutchinson 模式需要; 黎曼模式下先投影到切空间。
    多个探针 (或 exact 模式的 d 个基向量) 沿行方向平铺, 一次前向 + 一次反向完成。
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n, d = z.shape
    c = np.broadcast_to(np.asarray(c, dtype=np.int64).reshape(-1), (n,))

    if icfg.divergence_mode is DivergenceMode.EXACT:
        basis = np.broadcast_to(np.eye(d)[:, None, :], (d, n, d))
        directions = basis
    else:
        if probes is None:
            raise ValueError("hutchinson 模式需要探针")
        directions = np.asarray(probes, dtype=np.float64)
        if directions.ndim == 2:
            directions = directions[None]
        if directions.shape[1:] != (n, d):
            raise ShapeMismatchError(f"探针形状 {directions.shape} 与点集 {(n, d)} 不一致")
    if params.project_output:
        directions = _project_rows(z[None, :, :], directions)

    reps = directions.shape[0]
    tiled_z = np.tile(z, (reps, 1))
    tiled_c = np.tile(c, reps)
    flat = directions.reshape(reps * n, d)
    vjp, v = batch_input_vjp(params, tiled_z, t, tiled_c, flat, check_tangent=False)
    quad = np.sum(flat * vjp, axis=1).reshape(reps, n)
    if icfg.divergence_mode is DivergenceMode.EXACT:
        div = quad.sum(axis=0)
    else:
        div = quad.mean(axis=0)
    return div, v[:n]


def divergence_estimate(
    params: FieldParams,
    z: SpherePoint,
    t: float,
    c: Modality,
    icfg: IntegratorConfig,
    rng: np.random.Generator,
) -> float:
    """单点散度; hutchinson 模式从 rng 抽取 M 个探针"""
    probes = None
    if icfg.divergence_mode is DivergenceMode.HUTCHINSON:
        probes = draw_probes(icfg.probe_distribution, (icfg.probes_per_step, 1, z.dim), rng)
    div, _ = batch_divergence(params, z.coords[None, :], t, np.array([int(c)]), icfg, probes)
    value = float(div[0])
    if not math.isfinite(value):
        raise NumericalError(f"散度估计非有限: {value}")
    return value


# ========== 反向积分 ==========

@dataclass
class _IntegrationResult:
    divergence_integral: np.ndarray  # (n,)
    terminal: np.ndarray             # (n, d), 未归一化 (欧氏模式)
    log_base: np.ndarray             # (n,)


def _base_log_density(params: FieldParams, terminal: np.ndarray) -> np.ndarray:
    n, d = terminal.shape
    if params.geometry_mode is GeometryMode.EUCLIDEAN_GAUSSIAN_BASE:
        return -0.5 * d * math.log(2.0 * math.pi) - 0.5 * np.sum(terminal * terminal, axis=1)
    return np.full(n, log_uniform_density(d))


def integrate_points(
    params: FieldParams,
    z1: np.ndarray,
    c: np.ndarray,
    icfg: IntegratorConfig,
    probes: Optional[np.ndarray] = None,
) -> _IntegrationResult:
    """批量反向 Euler 积分

    probes: (n, K, M, d), 第 k 个积分步 (从 t=1 开始计) 使用 probes[:, k]。
    """
    z = np.atleast_2d(np.asarray(z1, dtype=np.float64)).copy()
    n, d = z.shape
    if d != params.d:
        raise ShapeMismatchError(f"点维度 {d} 与网络维度 {params.d} 不一致")
    K = icfg.steps
    dt = 1.0 / K
    acc = np.zeros(n)

    for j, k in enumerate(range(K, 0, -1)):
        t = k / K
        step_probes = None
        if probes is not None:
            # (n, M, d) → (M, n, d)
            step_probes = np.transpose(probes[:, j], (1, 0, 2))
        try:
            div, v = batch_divergence(params, z, t, c, icfg, step_probes)
        except NumericalError as e:
            raise NumericalError(f"积分第 {k} 步 (t={t:.4f}) 失败: {e.message}", block=e.block, step=k) from e
        acc = acc + div * dt
        z = z - v * dt
        if params.project_output:
            z = normalize_rows(z)
        if not (np.all(np.isfinite(acc)) and np.all(np.isfinite(z))):
            bad = np.flatnonzero(~np.isfinite(acc) | ~np.all(np.isfinite(z), axis=1))
            raise NumericalError(f"积分第 {k} 步状态非有限 (行 {bad[:10].tolist()})", step=k)

    return _IntegrationResult(divergence_integral=acc, terminal=z, log_base=_base_log_density(params, z))


def _records(
    result: _IntegrationResult,
    icfg: IntegratorConfig,
    c: np.ndarray,
    indices: Sequence[int],
) -> list[ScoreRecord]:
    records = []
    for row, index in enumerate(indices):
        log_density = float(result.log_base[row]) - float(result.divergence_integral[row])
        records.append(ScoreRecord(
            uncertainty=-log_density,
            log_density=log_density,
            divergence_integral=float(result.divergence_integral[row]),
            terminal_point=SpherePoint(result.terminal[row]),
            steps_used=icfg.steps,
            probes_per_step=icfg.probes_per_step,
            index=int(index),
            modality=Modality(int(c[row])),
        ))
    return records


def _point_probes(icfg: IntegratorConfig, d: int, rng: np.random.Generator) -> Optional[np.ndarray]:
    if icfg.divergence_mode is DivergenceMode.EXACT:
        return None
    return draw_probes(icfg.probe_distribution, (icfg.steps, icfg.probes_per_step, d), rng)


def reverse_integrate(
    params: FieldParams,
    z1: SpherePoint,
    c: Modality,
    icfg: IntegratorConfig,
    rng: np.random.Generator,
) -> ScoreRecord:
    """单点评分, 探针按 (K, M, d) 顺序从 rng 抽取"""
    probes = _point_probes(icfg, z1.dim, rng)
    cs = np.array([int(c)])
    result = integrate_points(
        params, z1.coords[None, :], cs, icfg, None if probes is None else probes[None],
    )
    return _records(result, icfg, cs, [-1])[0]


# ========== 批量评分 ==========

def point_rng(seed: int, index: int) -> np.random.Generator:
    """每个点独立的随机数流, 只依赖 (主种子, 下标)"""
    return np.random.default_rng([seed, index])


def score_array(
    params: FieldParams,
    points: np.ndarray,
    modalities: np.ndarray,
    icfg: IntegratorConfig,
    parallelism: int = 1,
    *,
    chunk_size: Optional[int] = None,
) -> list[ScoreRecord]:
    """按固定分块并行评分, 结果保持输入顺序且与并行度无关"""
    points = np.asarray(points, dtype=np.float64)
    n = 0 if points.size == 0 else points.shape[0]
    if n == 0:
        return []
    if points.ndim != 2 or points.shape[1] != params.d:
        raise ShapeMismatchError(f"点集形状 {points.shape} 与网络维度 {params.d} 不一致")
    modalities = np.broadcast_to(np.asarray(modalities, dtype=np.int64).reshape(-1), (n,))
    chunk = chunk_size or config.runtime.score_chunk
    starts = list(range(0, n, chunk))

    def run_chunk(start: int) -> tuple[list[ScoreRecord], list[tuple[int, str]]]:
        idx = list(range(start, min(start + chunk, n)))
        probes = [_point_probes(icfg, params.d, point_rng(icfg.seed, i)) for i in idx]
        stacked = None if probes[0] is None else np.stack(probes)  # type: ignore[arg-type]
        try:
            result = integrate_points(params, points[idx], modalities[idx], icfg, stacked)
            return _records(result, icfg, modalities[idx], idx), []
        except SphereFlowError:
            pass
        # 分块失败时逐点重算, 定位具体失败的样本
        records: list[ScoreRecord] = []
        failures: list[tuple[int, str]] = []
        for row, i in enumerate(idx):
            single = None if stacked is None else stacked[row:row + 1]
            try:
                result = integrate_points(params, points[i:i + 1], modalities[i:i + 1], icfg, single)
                records.extend(_records(result, icfg, modalities[i:i + 1], [i]))
            except SphereFlowError as e:
                failures.append((i, e.message))
        return records, failures

    workers = max(1, min(parallelism, len(starts)))
    if workers == 1:
        outcomes = [run_chunk(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_chunk, starts))

    records = [r for recs, _ in outcomes for r in recs]
    failures = [f for _, fails in outcomes for f in fails]
    if failures:
        raise BatchScoringError(sorted(failures))
    return records


def score_batch(
    params: FieldParams,
    points: Sequence[tuple[SpherePoint, Modality]],
    icfg: IntegratorConfig,
    parallelism: int = 1,
) -> list[ScoreRecord]:
    if not points:
        return []
    dims = {p.dim for p, _ in points}
    if len(dims) != 1:
        raise ShapeMismatchError(f"点集维度不一致: {sorted(dims)}")
    arr = np.stack([p.coords for p, _ in points])
    mods = np.array([int(m) for _, m in points])
    return score_array(params, arr, mods, icfg, parallelism)


def score_summary(records: Sequence[ScoreRecord]) -> dict[str, float]:
    """不确定性的均值、标准差与均值标准误 (消融对比用)"""
    if not records:
        return {"count": 0, "mean_uncertainty": math.nan, "std_uncertainty": math.nan, "sem_uncertainty": math.nan}
    u = np.array([r.uncertainty for r in records])
    std = float(u.std(ddof=1)) if u.size > 1 else 0.0
    return {
        "count": int(u.size),
        "mean_uncertainty": float(u.mean()),
        "std_uncertainty": std,
        "sem_uncertainty": std / math.sqrt(u.size),
    }


class LikelihoodService:
    """似然服务: 持有只读参数, 对外提供单点与批量评分"""

    def __init__(self, params: FieldParams, icfg: IntegratorConfig, threads: Optional[int] = None) -> None:
        self.params = params
        self.icfg = icfg
        self.threads = threads or config.runtime.threads

    def initialize(self) -> None:
        evals = self.params.d if self.icfg.divergence_mode is DivergenceMode.EXACT else self.icfg.probes_per_step
        logger.info(
            f"似然服务初始化完成: d={self.params.d}, K={self.icfg.steps}, M={self.icfg.probes_per_step}, "
            f"{self.icfg.divergence_mode.value}/{self.icfg.probe_distribution.value}, "
            f"每点约 {score_flops(self.params, self.icfg.steps, evals)} FLOPs"
        )

    def flops_per_point(self) -> int:
        evals = self.params.d if self.icfg.divergence_mode is DivergenceMode.EXACT else self.icfg.probes_per_step
        return score_flops(self.params, self.icfg.steps, evals)

    def score_point(self, z: SpherePoint, c: Modality, index: int = 0) -> ScoreRecord:
        record = reverse_integrate(self.params, z, c, self.icfg, point_rng(self.icfg.seed, index))
        return replace(record, index=index)

    def score(self, points: np.ndarray, modalities: np.ndarray) -> list[ScoreRecord]:
        records = score_array(self.params, points, modalities, self.icfg, self.threads)
        summary = score_summary(records)
        logger.info(
            f"评分完成: {summary['count']} 个点, 平均不确定性 {summary['mean_uncertainty']:.4f} "
            f"± {summary['sem_uncertainty']:.4f} nats"
        )
        return records
