"""条件时变向量场网络 v_t(z, c; φ)

结构: 输入投影 → 正弦时间编码 + 两层 MLP → 与模态查表相加得到条件向量
→ B 个 AdaLN 残差块 → 零初始化输出投影 → 切空间投影。

    h_{i+1} = h_i + Linear(SiLU(Norm(h_i) · (1 + scale(cond)) + shift(cond)))

所有梯度 (参数梯度与输入方向的 VJP) 均为解析实现, 批量计算, 行与行之间互不影响
(LayerNorm 按行归一化)。
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from loguru import logger
from scipy.special import expit

from ..errors import InvalidInputError, NumericalError, ShapeMismatchError
from ..models.flow import FlowConfig, GeometryMode, Precision
from ..models.geometry import Modality, SpherePoint, TangentVector

LAYER_NORM_EPS = 1e-5
# 频率阶梯 ω_k = 2π · 2^(k · OCTAVES / F), 覆盖 [2π, 2π·1024]
TIME_OCTAVES = 10.0
# input_vjp 的探针切向容差
PROBE_TANGENT_TOL = 1e-6


def tensor_names(depth: int) -> list[str]:
    """参数张量的固定顺序 (检查点文件也按此顺序存储)"""
    names = [
        "input.weight", "input.bias",
        "time.fc1.weight", "time.fc1.bias",
        "time.fc2.weight", "time.fc2.bias",
        "modality.table",
    ]
    for i in range(depth):
        names += [
            f"blocks.{i}.scale.weight", f"blocks.{i}.scale.bias",
            f"blocks.{i}.shift.weight", f"blocks.{i}.shift.bias",
            f"blocks.{i}.linear.weight", f"blocks.{i}.linear.bias",
        ]
    names += ["output.weight", "output.bias"]
    return names


def tensor_shapes(d: int, hidden: int, depth: int, freqs: int) -> dict[str, tuple[int, ...]]:
    H = hidden
    shapes: dict[str, tuple[int, ...]] = {
        "input.weight": (d, H), "input.bias": (H,),
        "time.fc1.weight": (2 * freqs, H), "time.fc1.bias": (H,),
        "time.fc2.weight": (H, H), "time.fc2.bias": (H,),
        "modality.table": (2, H),
    }
    for i in range(depth):
        for part in ("scale", "shift", "linear"):
            shapes[f"blocks.{i}.{part}.weight"] = (H, H)
            shapes[f"blocks.{i}.{part}.bias"] = (H,)
    shapes["output.weight"] = (H, d)
    shapes["output.bias"] = (d,)
    return shapes


@dataclass
class FieldParams:
    """向量场网络的全部可学习参数 φ"""
    d: int
    hidden: int
    depth: int
    freqs: int
    tensors: dict[str, np.ndarray]
    geometry_mode: GeometryMode = GeometryMode.RIEMANNIAN
    precision: Precision = Precision.FLOAT32
    # 冻结后优化器不再更新
    frozen: bool = False

    def __post_init__(self) -> None:
        expected = tensor_shapes(self.d, self.hidden, self.depth, self.freqs)
        missing = [n for n in expected if n not in self.tensors]
        if missing:
            raise ShapeMismatchError(f"缺少参数张量: {missing[:5]}")
        for name, shape in expected.items():
            arr = self.tensors[name]
            if arr.shape != shape:
                raise ShapeMismatchError(f"{name} 形状 {arr.shape}, 期望 {shape}")
            self.tensors[name] = np.ascontiguousarray(arr, dtype=self.dtype)

    @property
    def dtype(self) -> type[np.floating]:
        return np.float64 if self.precision is Precision.FLOAT64 else np.float32

    @property
    def project_output(self) -> bool:
        return self.geometry_mode.is_riemannian

    def names(self) -> list[str]:
        return tensor_names(self.depth)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def like(self, tensors: dict[str, np.ndarray]) -> FieldParams:
        """同结构的新参数集 (梯度、动量缓冲等)"""
        return FieldParams(
            d=self.d, hidden=self.hidden, depth=self.depth, freqs=self.freqs,
            tensors=tensors, geometry_mode=self.geometry_mode, precision=self.precision,
        )

    def zeros_like(self) -> FieldParams:
        return self.like({n: np.zeros_like(a) for n, a in self.tensors.items()})

    def copy(self) -> FieldParams:
        out = self.like({n: a.copy() for n, a in self.tensors.items()})
        out.frozen = self.frozen
        return out

    def astype(self, precision: Precision) -> FieldParams:
        out = FieldParams(
            d=self.d, hidden=self.hidden, depth=self.depth, freqs=self.freqs,
            tensors={n: a.copy() for n, a in self.tensors.items()},
            geometry_mode=self.geometry_mode, precision=precision,
        )
        out.frozen = self.frozen
        return out

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(a))) for a in self.tensors.values())

    def flat(self) -> np.ndarray:
        """按固定顺序展平为 float64 向量"""
        return np.concatenate([self.tensors[n].astype(np.float64).ravel() for n in self.names()])

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a.astype(np.float64) ** 2)) for a in self.tensors.values())))

    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.tensors.values()))


def init_params(
    d: int,
    hidden: int,
    depth: int,
    freqs: int,
    rng: np.random.Generator,
    *,
    geometry_mode: GeometryMode = GeometryMode.RIEMANNIAN,
    precision: Precision = Precision.FLOAT32,
) -> FieldParams:
    """均匀 fan-in 初始化; 输出投影全部为 0"""
    tensors: dict[str, np.ndarray] = {}
    shapes = tensor_shapes(d, hidden, depth, freqs)
    fan_in = {
        "input": d, "time.fc1": 2 * freqs, "time.fc2": hidden,
        # 查表视为 one-hot(2) 输入的线性层
        "modality": 2,
    }
    for name in tensor_names(depth):
        shape = shapes[name]
        if name.startswith("output."):
            tensors[name] = np.zeros(shape)
            continue
        prefix = name.rsplit(".", 1)[0]
        fi = fan_in.get(prefix, hidden)
        bound = 1.0 / np.sqrt(fi)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return FieldParams(
        d=d, hidden=hidden, depth=depth, freqs=freqs, tensors=tensors,
        geometry_mode=geometry_mode, precision=precision,
    )


def init_params_from_config(cfg: FlowConfig, rng: np.random.Generator) -> FieldParams:
    return init_params(
        cfg.d, cfg.hidden, cfg.depth, cfg.freqs, rng,
        geometry_mode=cfg.geometry_mode, precision=cfg.precision,
    )


# ========== 时间编码 ==========

@dataclass(frozen=True)
class TimeEncoding:
    """正弦时间编码 γ(t): [sin ω_0 t, cos ω_0 t, sin ω_1 t, ...]"""
    features: np.ndarray


def frequency_ladder(freqs: int) -> np.ndarray:
    k = np.arange(freqs, dtype=np.float64)
    return 2.0 * np.pi * np.power(2.0, k * TIME_OCTAVES / freqs)


def time_features(t: np.ndarray, freqs: int) -> np.ndarray:
    """批量时间编码, 输出 (n, 2F)"""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    phase = t[:, None] * frequency_ladder(freqs)[None, :]
    out = np.empty((t.shape[0], 2 * freqs))
    out[:, 0::2] = np.sin(phase)
    out[:, 1::2] = np.cos(phase)
    return out


def encode_time(t: float, freqs: int) -> TimeEncoding:
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"时间 t 必须在 [0, 1] 内, 当前值: {t}")
    return TimeEncoding(features=time_features(np.array([t]), freqs)[0])


# ========== 前向 ==========

def _silu(x: np.ndarray) -> np.ndarray:
    return x * expit(x)


def _silu_grad(x: np.ndarray) -> np.ndarray:
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass
class _BlockTape:
    normed: np.ndarray
    inv_std: np.ndarray
    scale: np.ndarray
    pre_act: np.ndarray
    act: np.ndarray


@dataclass
class FieldEvalTape:
    """反向传播所需的逐块激活缓存, 每次反向调用只能消费一次"""
    z: np.ndarray                    # (n, d) float64
    modality: np.ndarray             # (n,) int
    x: np.ndarray
    gamma: np.ndarray
    time_pre: np.ndarray
    time_act: np.ndarray
    cond: np.ndarray
    blocks: list[_BlockTape] = field(default_factory=list)
    h_last: Optional[np.ndarray] = None
    raw_output: Optional[np.ndarray] = None    # ṽ, float64
    consumed: bool = False

    def consume(self) -> None:
        if self.consumed:
            raise RuntimeError("FieldEvalTape 已被消费, 请重新前向计算")
        self.consumed = True


def _check_finite(arr: np.ndarray, where: str, block: Optional[int] = None) -> None:
    if not np.all(np.isfinite(arr)):
        bad_rows = np.flatnonzero(~np.all(np.isfinite(arr), axis=-1))
        raise NumericalError(
            f"{where} 出现非有限激活 (行 {bad_rows[:10].tolist()})", block=block
        )


def _prepare_inputs(
    params: FieldParams,
    z: np.ndarray,
    t: np.ndarray,
    c: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n = z.shape[0]
    if z.shape[1] != params.d:
        raise ShapeMismatchError(f"输入维度 {z.shape[1]} 与网络维度 {params.d} 不一致")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (n,))
    c = np.broadcast_to(np.asarray(c, dtype=np.int64).reshape(-1), (n,))
    if np.any((t < 0.0) | (t > 1.0)):
        raise InvalidInputError("时间 t 必须在 [0, 1] 内")
    if np.any((c != 0) & (c != 1)):
        raise InvalidInputError("modality 必须是 0 或 1")
    return z, t, c


def forward_batch(
    params: FieldParams,
    z: np.ndarray,
    t: np.ndarray | float,
    c: np.ndarray | int,
    *,
    with_tape: bool = False,
) -> tuple[np.ndarray, Optional[FieldEvalTape]]:
    """批量前向: 返回 (n, d) float64 速度 (黎曼模式下已投影到切空间)"""
    z, t_arr, c_arr = _prepare_inputs(params, np.asarray(z), np.asarray(t), np.asarray(c))
    dt = params.dtype
    p = params.tensors

    x = z.astype(dt)
    h = x @ p["input.weight"] + p["input.bias"]
    _check_finite(h, "输入投影")

    gamma = time_features(t_arr, params.freqs).astype(dt)
    time_pre = gamma @ p["time.fc1.weight"] + p["time.fc1.bias"]
    time_act = _silu(time_pre)
    cond = time_act @ p["time.fc2.weight"] + p["time.fc2.bias"] + p["modality.table"][c_arr]
    _check_finite(cond, "条件向量")

    tape = FieldEvalTape(
        z=z, modality=c_arr, x=x, gamma=gamma,
        time_pre=time_pre, time_act=time_act, cond=cond,
    )
    for i in range(params.depth):
        centered = h - h.mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=1, keepdims=True) + LAYER_NORM_EPS)
        normed = centered * inv_std
        scale = cond @ p[f"blocks.{i}.scale.weight"] + p[f"blocks.{i}.scale.bias"]
        shift = cond @ p[f"blocks.{i}.shift.weight"] + p[f"blocks.{i}.shift.bias"]
        pre_act = normed * (1.0 + scale) + shift
        act = _silu(pre_act)
        h = h + act @ p[f"blocks.{i}.linear.weight"] + p[f"blocks.{i}.linear.bias"]
        _check_finite(h, f"残差块 {i}", block=i)
        if with_tape:
            tape.blocks.append(_BlockTape(normed, inv_std, scale, pre_act, act))

    raw = (h @ p["output.weight"] + p["output.bias"]).astype(np.float64)
    _check_finite(raw, "输出投影")
    tape.h_last = h
    tape.raw_output = raw

    if params.project_output:
        v = raw - np.sum(raw * z, axis=1, keepdims=True) * z
    else:
        v = raw
    return v, (tape if with_tape else None)


def forward(
    params: FieldParams,
    z: SpherePoint,
    t: float,
    c: Modality,
) -> TangentVector:
    """单点前向"""
    v, _ = forward_batch(params, z.coords[None, :], t, int(c))
    if params.project_output:
        return TangentVector(base=z, vec=v[0])
    # 欧氏模式的输出不在切空间中, 仅在评估时投影
    return TangentVector(base=z, vec=v[0] - float(v[0] @ z.coords) * z.coords)


# ========== 反向 ==========

def _backprop(
    params: FieldParams,
    tape: FieldEvalTape,
    d_raw: np.ndarray,
    *,
    need_params: bool,
) -> tuple[np.ndarray, Optional[dict[str, np.ndarray]]]:
    """从 ∂/∂ṽ 反向传播, 返回 (∂/∂x, 参数梯度)"""
    tape.consume()
    if params.depth and len(tape.blocks) != params.depth:
        raise RuntimeError("前向未记录 tape, 请使用 with_tape=True")
    p = params.tensors
    dt = params.dtype
    grads: dict[str, np.ndarray] = {}

    g_raw = d_raw.astype(dt)
    assert tape.h_last is not None
    if need_params:
        grads["output.weight"] = tape.h_last.T @ g_raw
        grads["output.bias"] = g_raw.sum(axis=0)
    dh = g_raw @ p["output.weight"].T
    dcond = np.zeros_like(tape.cond)

    for i in reversed(range(params.depth)):
        rec = tape.blocks[i]
        w_lin = p[f"blocks.{i}.linear.weight"]
        if need_params:
            grads[f"blocks.{i}.linear.weight"] = rec.act.T @ dh
            grads[f"blocks.{i}.linear.bias"] = dh.sum(axis=0)
        d_pre = (dh @ w_lin.T) * _silu_grad(rec.pre_act)
        d_normed = d_pre * (1.0 + rec.scale)
        if need_params:
            d_scale = d_pre * rec.normed
            grads[f"blocks.{i}.scale.weight"] = tape.cond.T @ d_scale
            grads[f"blocks.{i}.scale.bias"] = d_scale.sum(axis=0)
            grads[f"blocks.{i}.shift.weight"] = tape.cond.T @ d_pre
            grads[f"blocks.{i}.shift.bias"] = d_pre.sum(axis=0)
            dcond += d_scale @ p[f"blocks.{i}.scale.weight"].T
            dcond += d_pre @ p[f"blocks.{i}.shift.weight"].T
        # 无仿射 LayerNorm 的反向
        dh = dh + rec.inv_std * (
            d_normed
            - d_normed.mean(axis=1, keepdims=True)
            - rec.normed * (d_normed * rec.normed).mean(axis=1, keepdims=True)
        )

    dx = dh @ p["input.weight"].T
    if not need_params:
        return dx.astype(np.float64), None

    grads["input.weight"] = tape.x.T @ dh
    grads["input.bias"] = dh.sum(axis=0)
    table = np.zeros_like(p["modality.table"])
    np.add.at(table, tape.modality, dcond)
    grads["modality.table"] = table
    grads["time.fc2.weight"] = tape.time_act.T @ dcond
    grads["time.fc2.bias"] = dcond.sum(axis=0)
    d_time_pre = (dcond @ p["time.fc2.weight"].T) * _silu_grad(tape.time_pre)
    grads["time.fc1.weight"] = tape.gamma.T @ d_time_pre
    grads["time.fc1.bias"] = d_time_pre.sum(axis=0)
    return dx.astype(np.float64), grads


@dataclass
class FlowBatch:
    """回归目标批次 (z_t, t, c, u_t)"""
    zt: np.ndarray                   # (n, d)
    t: np.ndarray                    # (n,)
    c: np.ndarray                    # (n,)
    ut: np.ndarray                   # (n, d)

    def __post_init__(self) -> None:
        self.zt = np.atleast_2d(np.asarray(self.zt, dtype=np.float64))
        self.ut = np.atleast_2d(np.asarray(self.ut, dtype=np.float64))
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.c = np.asarray(self.c, dtype=np.int64).reshape(-1)
        n = self.zt.shape[0]
        if n == 0:
            raise InvalidInputError("批次不能为空")
        if self.ut.shape != self.zt.shape or self.t.shape[0] != n or self.c.shape[0] != n:
            raise ShapeMismatchError(
                f"批次形状不一致: zt {self.zt.shape}, ut {self.ut.shape}, "
                f"t {self.t.shape}, c {self.c.shape}"
            )

    def __len__(self) -> int:
        return int(self.zt.shape[0])


def per_sample_loss_and_grad(
    params: FieldParams,
    batch: FlowBatch,
) -> tuple[np.ndarray, FieldParams]:
    """逐样本平方误差 ‖v - u_t‖² 以及批均值损失的参数梯度"""
    if batch.zt.shape[1] != params.d:
        raise ShapeMismatchError(f"批次维度 {batch.zt.shape[1]} 与网络维度 {params.d} 不一致")
    if params.project_output:
        inner = np.abs(np.sum(batch.ut * batch.zt, axis=1))
        if np.any(inner > PROBE_TANGENT_TOL * (1.0 + np.linalg.norm(batch.ut, axis=1))):
            raise InvalidInputError("u_t 不在 z_t 的切空间中")

    v, tape = forward_batch(params, batch.zt, batch.t, batch.c, with_tape=True)
    assert tape is not None
    diff = v - batch.ut
    per_sample = np.sum(diff * diff, axis=1)
    if not np.all(np.isfinite(per_sample)):
        raise NumericalError("损失出现 NaN/Inf")

    d_v = 2.0 * diff / len(batch)
    if params.project_output:
        # Π_{T_z} 关于 ṽ 的雅可比就是 Π_{T_z} 本身
        d_v = d_v - np.sum(d_v * batch.zt, axis=1, keepdims=True) * batch.zt
    _, grads = _backprop(params, tape, d_v, need_params=True)
    assert grads is not None
    return per_sample, params.like(grads)


def loss_and_param_grad(params: FieldParams, batch: FlowBatch) -> tuple[float, FieldParams]:
    """L = mean ‖v_t(z_t, c; φ) - u_t‖² 及其解析梯度"""
    per_sample, grad = per_sample_loss_and_grad(params, batch)
    loss = float(per_sample.mean())
    if not np.isfinite(loss):
        raise NumericalError(f"损失非有限: {loss}")
    return loss, grad


# ========== 输入方向 VJP ==========

def batch_input_vjp(
    params: FieldParams,
    z: np.ndarray,
    t: np.ndarray | float,
    c: np.ndarray | int,
    probes: np.ndarray,
    *,
    check_tangent: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """∇_z ⟨v(z), ε⟩ (ε 固定), 逐行; 同时返回 v(z)

    黎曼模式下 v = ṽ - ⟨ṽ, z⟩z, 投影本身对 z 的导数贡献
    -(⟨z, ε⟩ṽ + ⟨ṽ, z⟩ε), 网络部分的输入梯度由 Π_{T_z} ε 反向传播得到。
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if probes.shape != z.shape:
        raise ShapeMismatchError(f"探针形状 {probes.shape} 与输入形状 {z.shape} 不一致")
    z_dot_e = np.sum(z * probes, axis=1, keepdims=True)
    if check_tangent and params.project_output and np.any(np.abs(z_dot_e) > PROBE_TANGENT_TOL):
        raise InvalidInputError(f"探针不在切空间中: max |<probe, z>| = {np.abs(z_dot_e).max():.3e}")

    v, tape = forward_batch(params, z, t, c, with_tape=True)
    assert tape is not None and tape.raw_output is not None
    if not params.project_output:
        dx, _ = _backprop(params, tape, probes, need_params=False)
        return dx, v

    raw = tape.raw_output
    d_raw = probes - z_dot_e * z
    dx, _ = _backprop(params, tape, d_raw, need_params=False)
    raw_dot_z = np.sum(raw * z, axis=1, keepdims=True)
    explicit = -(z_dot_e * raw + raw_dot_z * probes)
    return dx + explicit, v


def input_vjp(
    params: FieldParams,
    z: SpherePoint,
    t: float,
    c: Modality,
    probe: TangentVector,
) -> np.ndarray:
    """单点输入 VJP"""
    if probe.dim != z.dim:
        raise ShapeMismatchError(f"探针维度 {probe.dim} 与 z 维度 {z.dim} 不一致")
    inner = abs(float(probe.vec @ z.coords))
    if inner > PROBE_TANGENT_TOL:
        raise InvalidInputError(f"探针不在 z 的切空间中: <probe, z> = {inner:.3e}")
    dx, _ = batch_input_vjp(params, z.coords[None, :], t, int(c), probe.vec[None, :])
    return dx[0]


# ========== 计算量 ==========

def count_flops(params: FieldParams) -> int:
    """单行前向的乘加次数 (×2 计为 FLOPs), 忽略逐元素运算"""
    d, H, F, B = params.d, params.hidden, params.freqs, params.depth
    macs = d * H + 2 * F * H + H * H + B * 3 * H * H + H * d
    return 2 * macs


def score_flops(params: FieldParams, steps: int, evaluations_per_step: int) -> int:
    """一次评分的 FLOPs 估计: 每步 (前向 + 约两倍前向的反向) × 探针数"""
    per_eval = count_flops(params)
    total = steps * evaluations_per_step * 3 * per_eval
    logger.debug(f"评分计算量估计: 每次前向 {per_eval} FLOPs, 总计 {total} FLOPs")
    return total
