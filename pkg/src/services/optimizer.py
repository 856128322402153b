"""AdamW (解耦权重衰减) 与线性预热后恒定的学习率"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatchError
from ..models.flow import FlowConfig
from ..network.field_net import FieldParams


def lr_at(step: int, cfg: FlowConfig) -> float:
    """lr = base · min(1, step / warmup); warmup 为 0 时恒定"""
    if cfg.warmup_steps == 0:
        return cfg.learning_rate
    return cfg.learning_rate * min(1.0, step / cfg.warmup_steps)


@dataclass
class TrainState:
    """训练状态: 参数、Adam 一二阶矩、步数与随机数生成器"""
    params: FieldParams
    m: FieldParams
    v: FieldParams
    step: int
    rng: np.random.Generator

    def __post_init__(self) -> None:
        for name in self.params.names():
            shape = self.params[name].shape
            if self.m[name].shape != shape or self.v[name].shape != shape:
                raise ShapeMismatchError(f"动量缓冲 {name} 的形状与参数 {shape} 不一致")
        if self.step < 0:
            raise ValueError(f"step 不能为负数: {self.step}")

    @classmethod
    def fresh(cls, params: FieldParams, rng: np.random.Generator) -> TrainState:
        return cls(params=params, m=params.zeros_like(), v=params.zeros_like(), step=0, rng=rng)


def apply_adamw(state: TrainState, grad: FieldParams, lr: float, cfg: FlowConfig) -> TrainState:
    """一次 AdamW 更新, 返回新状态 (step + 1), 不修改输入

    p ← p·(1 - lr·wd) - lr · m̂ / (√v̂ + eps)
    衰减项不进入梯度和动量。
    """
    t = state.step + 1
    if state.params.frozen:
        return TrainState(state.params, state.m, state.v, t, state.rng)

    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    decay = 1.0 - lr * cfg.weight_decay

    new_p: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name in state.params.names():
        g = grad[name].astype(np.float64)
        m = b1 * state.m[name].astype(np.float64) + (1.0 - b1) * g
        v = b2 * state.v[name].astype(np.float64) + (1.0 - b2) * g * g
        step_dir = (m / bias1) / (np.sqrt(v / bias2) + cfg.adam_eps)
        p = state.params[name].astype(np.float64)
        new_p[name] = p * decay - lr * step_dir
        new_m[name] = m
        new_v[name] = v
    return TrainState(
        params=state.params.like(new_p),
        m=state.m.like(new_m),
        v=state.v.like(new_v),
        step=t,
        rng=state.rng,
    )
