"""测试用的小网络与数据构造"""

import numpy as np

from src.geometry.sphere import batch_project_tangent, sample_uniform_batch
from src.models.data import EmbeddingPairSet, SyntheticKind, SyntheticSpec, VmfComponent
from src.models.flow import GeometryMode, Precision
from src.network.field_net import FieldParams, FlowBatch, init_params, tensor_shapes


def make_toy_params(
    d=5,
    hidden=16,
    depth=2,
    freqs=4,
    seed=0,
    geometry_mode=GeometryMode.RIEMANNIAN,
    output_scale=0.3,
):
    """float64 小网络, 输出层随机化 (零初始化时梯度无法流过)"""
    rng = np.random.default_rng(seed)
    params = init_params(
        d, hidden, depth, freqs, rng,
        geometry_mode=geometry_mode, precision=Precision.FLOAT64,
    )
    params.tensors["output.weight"] = rng.uniform(-output_scale, output_scale, size=(hidden, d))
    params.tensors["output.bias"] = rng.uniform(-output_scale, output_scale, size=(d,))
    return params


def make_zero_params(d=3, hidden=16, depth=1, freqs=4, seed=0, geometry_mode=GeometryMode.RIEMANNIAN):
    return init_params(
        d, hidden, depth, freqs, np.random.default_rng(seed),
        geometry_mode=geometry_mode, precision=Precision.FLOAT64,
    )


def linear_field_params(A, geometry_mode=GeometryMode.RIEMANNIAN):
    """B=0, H=d, W_in=I, W_out=Aᵀ: 投影前的输出为 ṽ(z) = Az"""
    d = A.shape[0]
    tensors = {name: np.zeros(shape) for name, shape in tensor_shapes(d, d, 0, 1).items()}
    tensors["input.weight"] = np.eye(d)
    tensors["output.weight"] = np.asarray(A, dtype=np.float64).T.copy()
    return FieldParams(
        d=d, hidden=d, depth=0, freqs=1, tensors=tensors,
        geometry_mode=geometry_mode, precision=Precision.FLOAT64,
    )


def random_tangent_batch(n, d, rng):
    """随机 (z_t, t, c, u_t) 批次"""
    zt = sample_uniform_batch(n, d, rng)
    ut = batch_project_tangent(zt, rng.standard_normal((n, d)))
    return FlowBatch(zt=zt, t=rng.random(n), c=rng.integers(0, 2, size=n), ut=ut)


def vmf_spec(d=3, kappa=10.0, count=1000, seed=0, axis=0):
    mean = [0.0] * d
    mean[axis] = 1.0
    return SyntheticSpec(
        kind=SyntheticKind.VMF, d=d, count=count, seed=seed,
        components=[VmfComponent(mean=mean, kappa=kappa)],
    )


def constant_pairs(n=64, d=3):
    """图像侧全为 e₁, 文本侧全为 e₂"""
    image = np.zeros((n, d), dtype=np.float32)
    text = np.zeros((n, d), dtype=np.float32)
    image[:, 0] = 1.0
    text[:, 1] = 1.0
    return EmbeddingPairSet(image=image, text=text)
