"""训练与积分配置模型"""

from __future__ import annotations

from enum import Enum
from typing import Any, Optional, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..errors import InvalidInputError


class GeometryMode(str, Enum):
    """几何模式 (消融实验)"""
    RIEMANNIAN = "riemannian"                            # 测地线路径 + 切空间投影
    EUCLIDEAN_UNIFORM_BASE = "euclidean_uniform_base"    # 直线路径, 球面均匀基分布
    EUCLIDEAN_GAUSSIAN_BASE = "euclidean_gaussian_base"  # 直线路径, N(0, I) 基分布

    @property
    def code(self) -> int:
        """检查点头部中的编码"""
        return list(GeometryMode).index(self)

    @classmethod
    def from_code(cls, code: int) -> GeometryMode:
        members = list(GeometryMode)
        if not 0 <= code < len(members):
            raise InvalidInputError(f"未知的几何模式编码: {code}")
        return members[code]

    @property
    def is_riemannian(self) -> bool:
        return self is GeometryMode.RIEMANNIAN


class Precision(str, Enum):
    """网络内部精度"""
    FLOAT32 = "float32"
    FLOAT64 = "float64"


class ProbeDistribution(str, Enum):
    """Hutchinson 探针分布"""
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"


class DivergenceMode(str, Enum):
    """散度计算方式"""
    HUTCHINSON = "hutchinson"        # 随机迹估计
    EXACT = "exact"                  # d 次方向导数, 仅适合小维度


class FlowConfig(BaseModel):
    """流匹配训练超参数, 默认值取自训练超参数表"""
    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=False)

    d: int = Field(ge=2)
    depth: int = Field(default=6, ge=1)
    hidden: int = Field(default=512, ge=1)
    freqs: int = Field(default=256, ge=1)

    learning_rate: float = Field(default=1e-5, gt=0.0)
    weight_decay: float = Field(default=1e-5, ge=0.0)
    batch_size: int = Field(default=2048, ge=1)
    total_steps: int = Field(default=400_000, ge=0)
    warmup_steps: int = Field(default=1_000, ge=0)
    seed: int = 0

    geometry_mode: GeometryMode = GeometryMode.RIEMANNIAN
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)

    # 可选梯度裁剪 (默认关闭)
    max_grad_norm: Optional[float] = Field(default=None, gt=0.0)
    precision: Precision = Precision.FLOAT32

    # 数据规模消融: 只使用前 max_pairs 个 (按种子抽样) 样本对
    max_pairs: Optional[int] = Field(default=None, ge=1)

    log_every: int = Field(default=100, ge=1)
    checkpoint_every: Optional[int] = Field(default=None, ge=1)


class IntegratorConfig(BaseModel):
    """反向 ODE 积分配置"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    steps: int = Field(default=5, ge=1)
    probes_per_step: int = Field(default=1, ge=1)
    probe_distribution: ProbeDistribution = ProbeDistribution.GAUSSIAN
    divergence_mode: DivergenceMode = DivergenceMode.HUTCHINSON
    seed: int = 0


ModelT = TypeVar("ModelT", bound=BaseModel)


def parse_model(model_cls: type[ModelT], data: dict[str, Any]) -> ModelT:
    """校验配置, 失败时抛出带字段名的 InvalidInputError"""
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        problems = []
        for err in e.errors():
            where = ".".join(str(p) for p in err["loc"]) or model_cls.__name__
            problems.append(f"{where}: {err['msg']}")
        raise InvalidInputError(f"{model_cls.__name__} 校验失败 - " + "; ".join(problems)) from e
