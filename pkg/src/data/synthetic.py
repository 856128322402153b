"""合成球面数据与解析 vMF 对数密度

vMF 采样: 径向分量 w = ⟨z, μ⟩ 在 d=3 时用精确逆 CDF, 其余维度用 Wood 拒绝采样;
切向方向在 μ 的正交补上均匀采样。κ=0 直接退化为球面均匀分布。
"""

from __future__ import annotations

from typing import Union

import numpy as np
from loguru import logger
from scipy.special import gammaln, ive, logsumexp

from ..errors import InvalidInputError, ShapeMismatchError
from ..geometry.sphere import log_uniform_density, sample_uniform_batch
from ..models.data import (
    EmbeddingPairSet, LabeledEmbeddingSet, SyntheticKind, SyntheticSpec, VmfComponent,
)
from ..models.geometry import SpherePoint

# κ 低于此值时按均匀分布的极限处理
KAPPA_UNIFORM_LIMIT = 1e-8


# ========== 采样 ==========

def _sample_radial_s2(kappa: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """d=3 的精确逆 CDF: w = 1 + log(u + (1-u)e^{-2κ}) / κ"""
    u = rng.random(n)
    return 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa


def _sample_radial_wood(kappa: float, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Wood 拒绝采样, 批量进行直到凑够 n 个"""
    m = d - 1
    b = m / (np.sqrt(4.0 * kappa ** 2 + m ** 2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + m * np.log(1.0 - x0 ** 2)

    accepted: list[np.ndarray] = []
    remaining = n
    while remaining > 0:
        draw = max(2 * remaining, 16)
        zeta = rng.beta(0.5 * m, 0.5 * m, size=draw)
        w = (1.0 - (1.0 + b) * zeta) / (1.0 - (1.0 - b) * zeta)
        u = rng.random(draw)
        ok = kappa * w + m * np.log(1.0 - x0 * w) - c >= np.log(u)
        got = w[ok][:remaining]
        accepted.append(got)
        remaining -= got.size
    return np.concatenate(accepted)


def _sample_orthogonal(mu: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """μ 正交补上的均匀单位方向"""
    while True:
        v = rng.standard_normal((n, mu.shape[0]))
        v -= (v @ mu)[:, None] * mu
        norms = np.linalg.norm(v, axis=1)
        if np.all(norms > 1e-12):
            return v / norms[:, None]


def sample_vmf(mu: np.ndarray, kappa: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n 个 vMF(μ, κ) 样本, (n, d) float64"""
    mu = np.asarray(mu, dtype=np.float64)
    mu = mu / np.linalg.norm(mu)
    d = mu.shape[0]
    if kappa < 0:
        raise InvalidInputError(f"kappa 必须 >= 0, 当前值: {kappa}")
    if n == 0:
        return np.zeros((0, d))
    if kappa < KAPPA_UNIFORM_LIMIT:
        return sample_uniform_batch(n, d, rng)

    if d == 3:
        w = _sample_radial_s2(kappa, n, rng)
    else:
        w = _sample_radial_wood(kappa, d, n, rng)
    w = np.clip(w, -1.0, 1.0)
    v = _sample_orthogonal(mu, n, rng)
    z = w[:, None] * mu + np.sqrt(1.0 - w ** 2)[:, None] * v
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def generate_synthetic(spec: SyntheticSpec) -> LabeledEmbeddingSet:
    """按描述生成带标签点集, labels 为分量编号 (uniform 时全为 0)"""
    rng = np.random.default_rng(spec.seed)
    if spec.kind is SyntheticKind.UNIFORM:
        points = sample_uniform_batch(spec.count, spec.d, rng)
        labels = np.zeros(spec.count, dtype=np.int64)
    else:
        labels = rng.choice(len(spec.components), size=spec.count, p=spec.weights)
        points = np.empty((spec.count, spec.d))
        for k, comp in enumerate(spec.components):
            idx = np.flatnonzero(labels == k)
            points[idx] = sample_vmf(comp.mean_array(), comp.kappa, idx.size, rng)
    logger.debug(f"已生成 {spec.count} 个合成点: kind={spec.kind.value}, d={spec.d}")
    return LabeledEmbeddingSet(points=points, labels=labels)


def pairs_from_synthetic(image_spec: SyntheticSpec, text_spec: SyntheticSpec) -> EmbeddingPairSet:
    """两个合成分布拼成训练用样本对 (图像侧 / 文本侧各一个分布)"""
    if image_spec.d != text_spec.d:
        raise ShapeMismatchError(f"两侧维度不一致: {image_spec.d} vs {text_spec.d}")
    if image_spec.count != text_spec.count:
        raise ShapeMismatchError(f"两侧数量不一致: {image_spec.count} vs {text_spec.count}")
    return EmbeddingPairSet(
        image=generate_synthetic(image_spec).points,
        text=generate_synthetic(text_spec).points,
    )


# ========== 解析密度 ==========

def _log_sinh(kappa: float) -> float:
    return kappa + float(np.log1p(-np.exp(-2.0 * kappa))) - float(np.log(2.0))


# ive 低于此值时已进入次正规数区间, 改用级数
IVE_UNDERFLOW = 1e-280


def _log_bessel_iv_series(nu: float, kappa: float) -> float:
    """log I_ν(κ) 的幂级数 Σ_k (κ/2)^(ν+2k) / (k! Γ(ν+k+1)), 在对数域求和"""
    n = max(64, int(2.0 * kappa) + 64)
    k = np.arange(n, dtype=np.float64)
    terms = (nu + 2.0 * k) * np.log(0.5 * kappa) - gammaln(k + 1.0) - gammaln(nu + k + 1.0)
    return float(logsumexp(terms))


def _log_bessel_iv(nu: float, kappa: float) -> float:
    """log I_ν(κ); ive 下溢 (ν ≫ κ) 时改用级数"""
    scaled = float(ive(nu, kappa))
    if scaled > IVE_UNDERFLOW and np.isfinite(scaled):
        return float(np.log(scaled)) + kappa
    return _log_bessel_iv_series(nu, kappa)


def vmf_log_normalizer(d: int, kappa: float) -> float:
    """log C_d(κ), 使 p(z) = C_d(κ) exp(κ⟨μ, z⟩)"""
    if kappa < 0:
        raise InvalidInputError(f"kappa 必须 >= 0, 当前值: {kappa}")
    if kappa < KAPPA_UNIFORM_LIMIT:
        return log_uniform_density(d)
    if d == 3:
        if kappa < 1e-4:
            # log(κ / sinh κ) ≈ -κ²/6
            return float(-np.log(4.0 * np.pi) - kappa ** 2 / 6.0)
        return float(np.log(kappa) - np.log(4.0 * np.pi) - _log_sinh(kappa))
    nu = 0.5 * d - 1.0
    return float(
        nu * np.log(kappa) - 0.5 * d * np.log(2.0 * np.pi) - _log_bessel_iv(nu, kappa)
    )


def vmf_logpdf_batch(z: np.ndarray, mu: np.ndarray, kappa: float) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    mu = np.asarray(mu, dtype=np.float64)
    if z.shape[1] != mu.shape[0]:
        raise ShapeMismatchError(f"点维度 {z.shape[1]} 与 μ 维度 {mu.shape[0]} 不一致")
    return vmf_log_normalizer(mu.shape[0], kappa) + kappa * (z @ mu)


def analytic_logpdf_batch(
    z: np.ndarray,
    target: Union[VmfComponent, SyntheticSpec],
) -> np.ndarray:
    """(n, d) 点的解析对数密度, 混合分布用 log-sum-exp 合并"""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if isinstance(target, VmfComponent):
        return vmf_logpdf_batch(z, target.mean_array(), target.kappa)
    if z.shape[1] != target.d:
        raise ShapeMismatchError(f"点维度 {z.shape[1]} 与分布维度 {target.d} 不一致")
    if target.kind is SyntheticKind.UNIFORM:
        return np.full(z.shape[0], log_uniform_density(target.d))
    terms = np.stack([
        np.log(comp.weight) + vmf_logpdf_batch(z, comp.mean_array(), comp.kappa)
        for comp in target.components
    ])
    return logsumexp(terms, axis=0)


def analytic_vmf_logpdf(
    z: SpherePoint,
    target: Union[VmfComponent, SyntheticSpec],
) -> float:
    return float(analytic_logpdf_batch(z.coords[None, :], target)[0])
