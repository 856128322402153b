"""训练服务 - 条件流匹配回归

每一步: 有放回抽取样本对, 逐对抽取模态 c ~ Bernoulli(0.5) 并选出 z₁,
z₀ 取自基分布, t ~ Unif[0,1], 沿测地线 (欧氏消融时沿直线) 得到 z_t 与目标速度 u_t,
最小化 ‖v(z_t, t, c) - u_t‖², AdamW 更新。
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
from loguru import logger

from ..data.store import subsample_pairs
from ..errors import DegenerateGeodesicError, NumericalError, ShapeMismatchError
from ..geometry.sphere import batch_degenerate_mask, batch_target_velocity, sample_uniform_batch
from ..models.data import EmbeddingPairSet
from ..models.flow import FlowConfig, GeometryMode
from ..models.geometry import Modality, SpherePoint, TangentVector
from ..network.checkpoint import save_checkpoint
from ..network.field_net import FieldParams, FlowBatch, init_params_from_config, per_sample_loss_and_grad
from ..utils.io import append_record, write_json
from .optimizer import TrainState, apply_adamw, lr_at

# 对径抽样的最大重采样次数
MAX_ANTIPODAL_RETRIES = 16


@dataclass
class StepMetrics:
    """单步训练指标"""
    step: int
    loss: float
    grad_norm: float
    lr: float
    loss_image: float = math.nan     # 批次中没有该模态时为 NaN
    loss_text: float = math.nan

    def to_record(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "loss": self.loss,
            "lr": self.lr,
            "grad_norm": self.grad_norm,
            "loss_image": self.loss_image,
            "loss_text": self.loss_text,
        }


@dataclass
class TrainingTuple:
    """单个回归目标; 黎曼模式下可取得类型化的点与切向量"""
    zt: np.ndarray
    t: float
    c: Modality
    ut: np.ndarray

    @property
    def point(self) -> SpherePoint:
        return SpherePoint(self.zt)

    @property
    def velocity(self) -> TangentVector:
        return TangentVector(base=self.point, vec=self.ut)


# ========== 采样 ==========

def _sample_base(mode: GeometryMode, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if mode is GeometryMode.EUCLIDEAN_GAUSSIAN_BASE:
        return rng.standard_normal((n, d))
    return sample_uniform_batch(n, d, rng)


def sample_training_batch(
    pairs: EmbeddingPairSet,
    mode: GeometryMode,
    batch_size: int,
    rng: np.random.Generator,
    *,
    t: Optional[np.ndarray] = None,
) -> FlowBatch:
    """一批 (z_t, t, c, u_t); 抽样顺序固定: 样本对 → 模态 → z₀ → t"""
    n, d = batch_size, pairs.d
    idx = rng.integers(0, pairs.n_pairs, size=n)
    c = rng.integers(0, 2, size=n)
    z1 = np.where(
        (c == int(Modality.IMAGE))[:, None],
        pairs.image[idx].astype(np.float64),
        pairs.text[idx].astype(np.float64),
    )
    z0 = _sample_base(mode, n, d, rng)
    t_arr = rng.random(n) if t is None else np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))

    if not mode.is_riemannian:
        tc = t_arr[:, None]
        return FlowBatch(zt=(1.0 - tc) * z0 + tc * z1, t=t_arr, c=c, ut=z1 - z0)

    bad = batch_degenerate_mask(z0, z1)
    retries = 0
    while np.any(bad):
        if retries >= MAX_ANTIPODAL_RETRIES:
            raise DegenerateGeodesicError(
                f"重采样 {MAX_ANTIPODAL_RETRIES} 次后 z₀ 仍与 z₁ 对径 (行 {np.flatnonzero(bad)[:10].tolist()})"
            )
        logger.warning(f"{int(bad.sum())} 个 z₀ 与 z₁ 对径, 重新采样")
        z0[bad] = sample_uniform_batch(int(bad.sum()), d, rng)
        bad = batch_degenerate_mask(z0, z1)
        retries += 1

    ut, zt = batch_target_velocity(z0, z1, t_arr)
    return FlowBatch(zt=zt, t=t_arr, c=c, ut=ut)


def sample_training_tuple(
    pairs: EmbeddingPairSet,
    cfg: FlowConfig,
    rng: np.random.Generator,
) -> TrainingTuple:
    batch = sample_training_batch(pairs, cfg.geometry_mode, 1, rng)
    return TrainingTuple(
        zt=batch.zt[0], t=float(batch.t[0]), c=Modality(int(batch.c[0])), ut=batch.ut[0],
    )


# ========== 单步 ==========

def _modality_loss(per_sample: np.ndarray, c: np.ndarray, modality: Modality) -> float:
    mask = c == int(modality)
    return float(per_sample[mask].mean()) if np.any(mask) else math.nan


def train_step(
    state: TrainState,
    batch: FlowBatch,
    cfg: FlowConfig,
    *,
    lr: Optional[float] = None,
) -> tuple[TrainState, StepMetrics]:
    """一次前向 + 解析反向 + AdamW 更新; lr 缺省时按预热计划取 lr_at(step + 1)"""
    step = state.step + 1
    lr = lr_at(step, cfg) if lr is None else lr
    try:
        per_sample, grad = per_sample_loss_and_grad(state.params, batch)
    except NumericalError as e:
        raise NumericalError(f"第 {step} 步前向/反向失败: {e.message}", block=e.block, step=step) from e

    loss = float(per_sample.mean())
    grad_norm = grad.global_norm()
    if not (np.isfinite(loss) and np.isfinite(grad_norm)):
        raise NumericalError(
            f"第 {step} 步出现非有限值: loss={loss}, grad_norm={grad_norm}", step=step
        )
    if cfg.max_grad_norm is not None and grad_norm > cfg.max_grad_norm:
        scale = cfg.max_grad_norm / grad_norm
        grad = grad.like({n: a * scale for n, a in grad.tensors.items()})

    new_state = apply_adamw(state, grad, lr, cfg)
    metrics = StepMetrics(
        step=step,
        loss=loss,
        grad_norm=grad_norm,
        lr=lr,
        loss_image=_modality_loss(per_sample, batch.c, Modality.IMAGE),
        loss_text=_modality_loss(per_sample, batch.c, Modality.TEXT),
    )
    return new_state, metrics


# ========== 训练服务 ==========

class TrainerService:
    """训练服务: 固定步数预算, 定期输出指标与检查点"""

    def __init__(
        self,
        cfg: FlowConfig,
        *,
        checkpoint_path: Optional[Path] = None,
        metrics_path: Optional[Path] = None,
    ) -> None:
        self.cfg = cfg
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self.state: Optional[TrainState] = None
        self.history: list[StepMetrics] = []

        self._on_metrics: Optional[Callable[[StepMetrics], None]] = None
        self._on_checkpoint: Optional[Callable[[int, Path], None]] = None

    def set_callbacks(
        self,
        on_metrics: Optional[Callable[[StepMetrics], None]] = None,
        on_checkpoint: Optional[Callable[[int, Path], None]] = None,
    ) -> None:
        self._on_metrics = on_metrics
        self._on_checkpoint = on_checkpoint

    def initialize(self, pairs: EmbeddingPairSet) -> EmbeddingPairSet:
        """校验数据维度, 按需截取子集, 初始化参数与优化器状态"""
        if pairs.d != self.cfg.d:
            raise ShapeMismatchError(f"数据维度 {pairs.d} 与配置 d={self.cfg.d} 不一致")
        if self.cfg.max_pairs is not None and self.cfg.max_pairs < pairs.n_pairs:
            pairs = subsample_pairs(pairs, self.cfg.max_pairs, self.cfg.seed)
            logger.info(f"数据规模消融: 使用 {pairs.n_pairs} 个样本对")

        rng = np.random.default_rng(self.cfg.seed)
        params = init_params_from_config(self.cfg, rng)
        self.state = TrainState.fresh(params, rng)
        self.history = []
        logger.info(
            f"训练服务初始化完成: d={self.cfg.d}, H={self.cfg.hidden}, B={self.cfg.depth}, "
            f"{params.num_parameters()} 个参数, 几何模式 {self.cfg.geometry_mode.value}"
        )
        return pairs

    def fit(self, pairs: EmbeddingPairSet) -> FieldParams:
        """运行 total_steps 步, 返回最终参数"""
        pairs = self.initialize(pairs)
        assert self.state is not None
        cfg = self.cfg
        started = time.perf_counter()

        metrics_fh = None
        if self.metrics_path is not None:
            self.metrics_path.parent.mkdir(parents=True, exist_ok=True)
            metrics_fh = open(self.metrics_path, "w", encoding="utf-8")
        saved_step: Optional[int] = None
        try:
            for _ in range(cfg.total_steps):
                batch = sample_training_batch(pairs, cfg.geometry_mode, cfg.batch_size, self.state.rng)
                self.state, metrics = train_step(self.state, batch, cfg)
                self.history.append(metrics)

                if metrics.step % cfg.log_every == 0 or metrics.step == cfg.total_steps:
                    logger.debug(
                        f"step {metrics.step}: loss={metrics.loss:.6f} "
                        f"grad_norm={metrics.grad_norm:.4e} lr={metrics.lr:.3e}"
                    )
                    if metrics_fh is not None:
                        append_record(metrics_fh, metrics.to_record())
                    if self._on_metrics:
                        self._on_metrics(metrics)

                if cfg.checkpoint_every and metrics.step % cfg.checkpoint_every == 0:
                    self._write_checkpoint()
                    saved_step = metrics.step
        finally:
            if metrics_fh is not None:
                metrics_fh.close()

        # 最后一步恰好落在间隔上时已经写过
        if saved_step != self.state.step:
            self._write_checkpoint()
        elapsed = time.perf_counter() - started
        final = self.history[-1].loss if self.history else math.nan
        logger.info(f"训练完成: {cfg.total_steps} 步, 最终损失 {final:.6f}, 用时 {elapsed:.1f}s")
        return self.state.params

    def _write_checkpoint(self) -> None:
        if self.checkpoint_path is None or self.state is None:
            return
        save_checkpoint(self.state.params, self.checkpoint_path)
        write_json(sidecar_path(self.checkpoint_path), self.sidecar())
        if self._on_checkpoint:
            self._on_checkpoint(self.state.step, self.checkpoint_path)

    def sidecar(self) -> dict[str, Any]:
        """检查点旁的元数据: 配置回显、步数、损失、随机数状态"""
        assert self.state is not None
        return {
            "config": self.cfg.model_dump(mode="json"),
            "step": self.state.step,
            "loss": self.history[-1].loss if self.history else None,
            "initial_loss": self.history[0].loss if self.history else None,
            "rng_state": self.state.rng.bit_generator.state,
        }


def sidecar_path(checkpoint_path: Path) -> Path:
    return checkpoint_path.with_name(checkpoint_path.name + ".meta.json")


def fit(
    pairs: EmbeddingPairSet,
    cfg: FlowConfig,
    *,
    on_metrics: Optional[Callable[[StepMetrics], None]] = None,
    checkpoint_path: Optional[Path] = None,
    metrics_path: Optional[Path] = None,
) -> FieldParams:
    service = TrainerService(cfg, checkpoint_path=checkpoint_path, metrics_path=metrics_path)
    service.set_callbacks(on_metrics=on_metrics)
    return service.fit(pairs)
