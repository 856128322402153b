"""超球面 S^(d-1) 的闭式几何: 切空间投影、测地线、插值、基分布采样与体积

所有几何运算使用 float64。每个操作都有批量形式 (batch_*), 输入为 (n, d) 数组,
单点接口 (SpherePoint / TangentVector) 委托给批量形式。
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from ..errors import DegenerateGeodesicError, InvalidInputError, ShapeMismatchError
from ..models.geometry import SpherePoint, TangentVector

# arccos 之前的点积截断
CLAMP_EPS = 1e-7
# 小角度阈值: 低于此值时退化为归一化线性插值
SMALL_ANGLE = 1e-5
# 对径阈值: 与 π 的距离小于此值时测地线不唯一
ANTIPODAL_MARGIN = 1e-6
# 高斯采样下溢阈值
UNDERFLOW_NORM = 1e-12


def _as_f64(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ShapeMismatchError(f"维度不一致: {a.shape[-1]} vs {b.shape[-1]}")


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


# ========== 批量形式 ==========

def batch_project_tangent(z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(I - z zᵀ) v, 逐行"""
    z, v = _as_f64(z), _as_f64(v)
    _check_same_dim(z, v)
    return v - _dot(v, z)[..., None] * z


def batch_geodesic_distance(z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
    """arccos(clamp(<z0, z1>, -1+εc, 1-εc))"""
    z0, z1 = _as_f64(z0), _as_f64(z1)
    _check_same_dim(z0, z1)
    return np.arccos(np.clip(_dot(z0, z1), -1.0 + CLAMP_EPS, 1.0 - CLAMP_EPS))


def batch_angle(z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
    """全量程数值稳定的夹角 2·atan2(|z1-z0|, |z1+z0|)

    插值和速度使用该角度而不是截断后的 arccos, 否则小角度和近对径时
    单位范数与端点条件无法保持在 1e-9 以内。
    """
    z0, z1 = _as_f64(z0), _as_f64(z1)
    _check_same_dim(z0, z1)
    return 2.0 * np.arctan2(np.linalg.norm(z1 - z0, axis=-1), np.linalg.norm(z1 + z0, axis=-1))


def batch_degenerate_mask(z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
    """对径 (测地线不唯一) 的行"""
    return batch_angle(z0, z1) > np.pi - ANTIPODAL_MARGIN


def _raise_if_antipodal(theta: np.ndarray) -> None:
    bad = np.flatnonzero(np.atleast_1d(theta > np.pi - ANTIPODAL_MARGIN))
    if bad.size:
        raise DegenerateGeodesicError(
            f"对径点之间的测地线不唯一 (行 {bad[:10].tolist()})"
        )


def _check_t(t: np.ndarray) -> np.ndarray:
    t = _as_f64(t)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise InvalidInputError("插值时间 t 必须在 [0, 1] 内")
    return t


def batch_slerp(z0: np.ndarray, z1: np.ndarray, t: np.ndarray | float) -> np.ndarray:
    """球面线性插值; θ < 1e-5 时使用归一化线性插值"""
    z0, z1 = _as_f64(z0), _as_f64(z1)
    theta = batch_angle(z0, z1)
    _raise_if_antipodal(theta)
    t = np.broadcast_to(_check_t(t), theta.shape)

    small = theta < SMALL_ANGLE
    safe_theta = np.where(small, 1.0, theta)
    sin_theta = np.sin(safe_theta)
    w0 = np.sin((1.0 - t) * safe_theta) / sin_theta
    w1 = np.sin(t * safe_theta) / sin_theta
    geo = w0[..., None] * z0 + w1[..., None] * z1

    lin = (1.0 - t)[..., None] * z0 + t[..., None] * z1
    lin = lin / np.linalg.norm(lin, axis=-1, keepdims=True)
    return np.where(small[..., None], lin, geo)


def batch_target_velocity(
    z0: np.ndarray,
    z1: np.ndarray,
    t: np.ndarray | float,
) -> tuple[np.ndarray, np.ndarray]:
    """测地线速度 u_t 及其所在点 z_t

    u_t = (θ / sinθ) [cos(tθ) z1 - cos((1-t)θ) z0]
    小角度时取 (z1 - z0) 在 T_{z_t} 上的投影。
    """
    z0, z1 = _as_f64(z0), _as_f64(z1)
    theta = batch_angle(z0, z1)
    _raise_if_antipodal(theta)
    t = np.broadcast_to(_check_t(t), theta.shape)
    zt = batch_slerp(z0, z1, t)

    small = theta < SMALL_ANGLE
    safe_theta = np.where(small, 1.0, theta)
    scale = safe_theta / np.sin(safe_theta)
    geo = scale[..., None] * (
        np.cos(t * safe_theta)[..., None] * z1 - np.cos((1.0 - t) * safe_theta)[..., None] * z0
    )
    lin = batch_project_tangent(zt, z1 - z0)
    return np.where(small[..., None], lin, geo), zt


def sample_uniform_batch(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """n 个 Unif(S^(d-1)) 样本: 高斯采样后归一化, 范数下溢时重采样"""
    if d < 2:
        raise InvalidInputError(f"球面维度 d 必须 >= 2, 当前值: {d}")
    xi = rng.standard_normal((n, d))
    norms = np.linalg.norm(xi, axis=1)
    while np.any(norms < UNDERFLOW_NORM):
        bad = norms < UNDERFLOW_NORM
        xi[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(xi, axis=1)
    return xi / norms[:, None]


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = _as_f64(x)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def fibonacci_sphere(n: int) -> np.ndarray:
    """S² 上近似等面积的 Fibonacci 格点, 每个点代表面积 4π/n"""
    i = np.arange(n, dtype=np.float64) + 0.5
    cos_polar = 1.0 - 2.0 * i / n
    sin_polar = np.sqrt(1.0 - cos_polar ** 2)
    azimuth = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.stack(
        [sin_polar * np.cos(azimuth), sin_polar * np.sin(azimuth), cos_polar], axis=1
    )


# ========== 单点接口 ==========

def project_tangent(z: SpherePoint, v: np.ndarray) -> TangentVector:
    """移除 v 的法向分量"""
    v = _as_f64(v).reshape(-1)
    if v.shape[0] != z.dim:
        raise ShapeMismatchError(f"维度不一致: z 为 {z.dim}, v 为 {v.shape[0]}")
    return TangentVector(base=z, vec=batch_project_tangent(z.coords, v))


def geodesic_distance(z0: SpherePoint, z1: SpherePoint) -> float:
    """大圆距离 (弧度)"""
    return float(batch_geodesic_distance(z0.coords, z1.coords))


def slerp(z0: SpherePoint, z1: SpherePoint, t: float) -> SpherePoint:
    _check_same_dim(z0.coords, z1.coords)
    return SpherePoint(batch_slerp(z0.coords, z1.coords, t))


def target_velocity(z0: SpherePoint, z1: SpherePoint, t: float) -> TangentVector:
    _check_same_dim(z0.coords, z1.coords)
    u, zt = batch_target_velocity(z0.coords, z1.coords, t)
    return TangentVector(base=SpherePoint(zt), vec=u)


def sample_uniform(d: int, rng: np.random.Generator) -> SpherePoint:
    return SpherePoint(sample_uniform_batch(1, d, rng)[0])


def log_uniform_density(d: int) -> float:
    """-log Vol(S^(d-1)) = -log(2π^(d/2) / Γ(d/2))"""
    if d < 2:
        raise InvalidInputError(f"球面维度 d 必须 >= 2, 当前值: {d}")
    return float(-(np.log(2.0) + 0.5 * d * np.log(np.pi) - gammaln(0.5 * d)))
