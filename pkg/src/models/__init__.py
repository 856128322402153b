"""数据模型定义"""

from .geometry import Modality, SpherePoint, TangentVector
from .flow import (
    DivergenceMode, FlowConfig, GeometryMode, IntegratorConfig,
    Precision, ProbeDistribution, parse_model,
)
from .data import (
    EmbeddingPairSet, LabeledEmbeddingSet, SyntheticKind, SyntheticSpec, VmfComponent,
)
from .score import ScoreLine, ScoreRecord
from .evaluation import (
    DEFAULT_REJECTION_GRID, EvalTable, OodReport, RankCorrelation,
    RejectionCurve, RocPrResult, SelectiveReport,
)
from .run import RunManifest

__all__ = [
    "Modality", "SpherePoint", "TangentVector",
    "DivergenceMode", "FlowConfig", "GeometryMode", "IntegratorConfig",
    "Precision", "ProbeDistribution", "parse_model",
    "EmbeddingPairSet", "LabeledEmbeddingSet", "SyntheticKind", "SyntheticSpec", "VmfComponent",
    "ScoreLine", "ScoreRecord",
    "DEFAULT_REJECTION_GRID", "EvalTable", "OodReport", "RankCorrelation",
    "RejectionCurve", "RocPrResult", "SelectiveReport",
    "RunManifest",
]
