"""评估报告输出: 行式指标记录与绘图用 CSV"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Any, Iterable, Sequence

from ..models.evaluation import OodReport, RejectionCurve, RocPrResult, SelectiveReport
from ..utils.io import atomic_write_text, write_records


def _write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    atomic_write_text(path, buf.getvalue())


def report_records(report: SelectiveReport | OodReport) -> list[dict[str, Any]]:
    if isinstance(report, SelectiveReport):
        records: list[dict[str, Any]] = [
            {"metric": "base_accuracy", "value": report.base_accuracy},
            {"metric": "acc_at_90", "value": report.acc_at_90},
            {"metric": "spearman_s", "value": report.spearman.value,
             "degenerate": report.spearman.degenerate},
        ]
        records += [{"metric": k, "value": v} for k, v in report.extras.items()]
        records += [
            {"metric": "rejection_accuracy", "fraction": f, "value": a}
            for f, a in report.curve.as_rows()
        ]
        return records
    return [
        {"metric": "auroc", "value": report.roc_pr.auroc},
        {"metric": "aupr", "value": report.roc_pr.aupr},
        {"metric": "n_in", "value": report.n_in},
        {"metric": "n_out", "value": report.n_out},
    ]


def write_metric_records(path: str | Path, report: SelectiveReport | OodReport) -> None:
    write_records(path, report_records(report))


def write_curve_csv(path: str | Path, curve: RejectionCurve) -> None:
    _write_csv(path, ["fraction", "accuracy"], curve.as_rows())


def write_roc_csv(path: str | Path, result: RocPrResult) -> None:
    _write_csv(path, ["fpr", "tpr"], zip(result.fpr.tolist(), result.tpr.tolist()))


def write_pr_csv(path: str | Path, result: RocPrResult) -> None:
    _write_csv(path, ["recall", "precision"], zip(result.recall.tolist(), result.precision.tolist()))
