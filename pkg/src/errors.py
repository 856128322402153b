"""错误类型 - 每个错误带一个机器可解析的类别和进程退出码"""

from __future__ import annotations

from typing import Sequence


class SphereFlowError(Exception):
    """所有引擎错误的基类"""
    category: str = "internal"
    exit_code: int = 4

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message

    def one_line(self) -> str:
        """CLI 输出的单行错误描述"""
        text = " ".join(self.message.split())
        return f"error: {self.category}: {text}"


# ===== 输入错误 (退出码 2) =====

class InputError(SphereFlowError, ValueError):
    """输入错误"""
    category = "invalid-input"
    exit_code = 2


class InputNotFoundError(InputError):
    category = "input-not-found"


class ShapeMismatchError(InputError):
    category = "shape-mismatch"


class InvalidInputError(InputError):
    category = "invalid-input"


class FileFormatError(InputError):
    category = "bad-format"


class TruncatedFileError(FileFormatError):
    category = "truncated-file"


class NonFiniteDataError(InputError):
    """数据中存在 NaN/Inf 行"""
    category = "non-finite-data"

    def __init__(self, message: str, rows: Sequence[int] = ()) -> None:
        super().__init__(message)
        self.rows = list(rows)


# ===== 数值错误 (退出码 3) =====

class NumericError(SphereFlowError, ArithmeticError):
    category = "numeric-failure"
    exit_code = 3


class DegenerateGeodesicError(NumericError):
    """对径点之间的测地线不唯一"""
    category = "degenerate-geodesic"


class NumericalError(NumericError):
    """非有限的激活、损失、散度或积分状态"""

    def __init__(
        self,
        message: str,
        *,
        block: int | None = None,
        step: int | None = None,
    ) -> None:
        super().__init__(message)
        self.block = block
        self.step = step


class BatchScoringError(NumericError):
    """批量评分中部分样本失败"""

    def __init__(self, failures: Sequence[tuple[int, str]]) -> None:
        self.failures = list(failures)
        head = "; ".join(f"#{i}: {msg}" for i, msg in self.failures[:5])
        more = f" (+{len(self.failures) - 5} more)" if len(self.failures) > 5 else ""
        super().__init__(f"{len(self.failures)} points failed: {head}{more}")


class ChecksumMismatchError(NumericError):
    """按清单重跑的输出与记录的校验和不一致"""
    category = "checksum-mismatch"
