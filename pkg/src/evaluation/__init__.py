"""评估指标与报告"""

from .metrics import (
    acc_at_rejection, aggregate_runs, curation_count, curation_rank, evaluate_ood,
    evaluate_selective, rejected_count, rejection_curve, roc_pr, spearman_s,
)
from .reports import (
    report_records, write_curve_csv, write_metric_records, write_pr_csv, write_roc_csv,
)

__all__ = [
    "acc_at_rejection", "aggregate_runs", "curation_count", "curation_rank", "evaluate_ood",
    "evaluate_selective", "rejected_count", "rejection_curve", "roc_pr", "spearman_s",
    "report_records", "write_curve_csv", "write_metric_records", "write_pr_csv", "write_roc_csv",
]
