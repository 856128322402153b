"""嵌入数据: 文件读写与合成分布"""

from .store import (
    load_labeled, load_pairs, load_points, save_labeled, save_pairs, subsample_pairs,
    validate_rows,
)
from .synthetic import (
    analytic_logpdf_batch, analytic_vmf_logpdf, generate_synthetic, pairs_from_synthetic,
    sample_vmf, vmf_log_normalizer, vmf_logpdf_batch,
)

__all__ = [
    "load_labeled", "load_pairs", "load_points", "save_labeled", "save_pairs", "subsample_pairs",
    "validate_rows",
    "analytic_logpdf_batch", "analytic_vmf_logpdf", "generate_synthetic",
    "pairs_from_synthetic", "sample_vmf", "vmf_log_normalizer", "vmf_logpdf_batch",
]
