"""嵌入文件读写

两种小端二进制格式, .gz 后缀时整体 gzip 压缩:

    SFL1 (训练用图文对)
        magic 4s "SFL1" | version u32 | d u32 | n u64
        image  n×d float32 | text n×d float32 | checksum u64 (BLAKE2b-64)

    SFLE (带标签的评估集)
        magic 4s "SFLE" | version u32 | d u32 | n u64 | flags u32 (bit0: 含 correctness)
        points n×d float32 | labels n int64 | [correctness n uint8] | checksum u64

加载时拒绝非有限行和范数偏离 1 超过 1e-2 的行, 其余行重新归一化。
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from loguru import logger

from ..errors import FileFormatError, InvalidInputError, NonFiniteDataError, TruncatedFileError
from ..models.data import EmbeddingPairSet, LabeledEmbeddingSet
from ..models.geometry import Modality
from ..utils.io import atomic_write_bytes, checksum64, read_bytes

PAIRS_MAGIC = b"SFL1"
LABELED_MAGIC = b"SFLE"
VERSION = 1
# 归一化前允许的范数偏差, 更大的偏差多半是上游管线错误
NORM_REJECT_TOL = 1e-2

_PAIRS_HEADER = struct.Struct("<4sIIQ")
_LABELED_HEADER = struct.Struct("<4sIIQI")
_CHECKSUM = struct.Struct("<Q")
_HAS_CORRECTNESS = 0x1


def _rows_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _seal(payload: bytes) -> bytes:
    return payload + _CHECKSUM.pack(checksum64(payload))


def _verify(payload: bytes, expected: int, path: Path) -> None:
    if len(payload) < expected:
        raise TruncatedFileError(f"{path} 被截断: {len(payload)} 字节, 期望 {expected}")
    if len(payload) > expected:
        raise FileFormatError(f"{path} 末尾有多余数据: {len(payload)} 字节, 期望 {expected}")
    (stored,) = _CHECKSUM.unpack_from(payload, expected - _CHECKSUM.size)
    if stored != checksum64(payload[: expected - _CHECKSUM.size]):
        raise FileFormatError(f"{path} 校验和不匹配")


def _check_header(magic: bytes, expected_magic: bytes, version: int, d: int, path: Path) -> None:
    if magic != expected_magic:
        raise FileFormatError(f"{path} magic 错误: {magic!r}, 期望 {expected_magic!r}")
    if version != VERSION:
        raise FileFormatError(f"{path} 不支持的版本: {version}")
    if d == 0:
        raise FileFormatError(f"{path} 头部维度为 0")
    if d < 2:
        raise FileFormatError(f"{path} 嵌入维度必须 >= 2, 当前值: {d}")


def validate_rows(rows: np.ndarray, side: str) -> np.ndarray:
    """拒绝非有限行和明显未归一化的行, 返回重新归一化后的 float32 数组"""
    rows64 = rows.astype(np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(rows64), axis=1))
    if bad.size:
        raise NonFiniteDataError(
            f"{side} 中存在 NaN/Inf 行: {bad[:20].tolist()}", rows=bad.tolist()
        )
    norms = np.linalg.norm(rows64, axis=1)
    off = np.flatnonzero(np.abs(norms - 1.0) > NORM_REJECT_TOL)
    if off.size:
        raise InvalidInputError(
            f"{side} 中有 {off.size} 行范数偏离 1 超过 {NORM_REJECT_TOL}: {off[:20].tolist()}"
        )
    return (rows64 / norms[:, None]).astype(np.float32)


# ========== SFL1 ==========

def save_pairs(pairs: EmbeddingPairSet, path: str | Path) -> None:
    header = _PAIRS_HEADER.pack(PAIRS_MAGIC, VERSION, pairs.d, pairs.n_pairs)
    atomic_write_bytes(path, _seal(header + _rows_bytes(pairs.image) + _rows_bytes(pairs.text)))
    logger.info(f"已写入 {pairs.n_pairs} 个样本对: {path}")


def load_pairs(path: str | Path) -> EmbeddingPairSet:
    return _decode_pairs(read_bytes(path), Path(path))


def _decode_pairs(payload: bytes, path: Path) -> EmbeddingPairSet:
    if len(payload) < _PAIRS_HEADER.size:
        raise TruncatedFileError(f"{path} 过短, 缺少头部")
    magic, version, d, n = _PAIRS_HEADER.unpack_from(payload, 0)
    _check_header(magic, PAIRS_MAGIC, version, d, path)
    if n < 1:
        raise FileFormatError(f"{path} 不含任何样本对")
    side_bytes = 4 * n * d
    _verify(payload, _PAIRS_HEADER.size + 2 * side_bytes + _CHECKSUM.size, path)

    offset = _PAIRS_HEADER.size
    image = np.frombuffer(payload, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    text = np.frombuffer(payload, dtype="<f4", count=n * d, offset=offset + side_bytes).reshape(n, d)
    pairs = EmbeddingPairSet(
        image=validate_rows(image, "image"),
        text=validate_rows(text, "text"),
    )
    logger.info(f"已加载 {pairs.n_pairs} 个样本对 (d={pairs.d}): {path}")
    return pairs


def subsample_pairs(pairs: EmbeddingPairSet, n: int, seed: int) -> EmbeddingPairSet:
    """按种子无放回抽取 n 个样本对 (数据规模消融)"""
    if n >= pairs.n_pairs:
        return pairs
    idx = np.sort(np.random.default_rng(seed).choice(pairs.n_pairs, size=n, replace=False))
    return EmbeddingPairSet(image=pairs.image[idx], text=pairs.text[idx])


# ========== SFLE ==========

def save_labeled(data: LabeledEmbeddingSet, path: str | Path) -> None:
    flags = _HAS_CORRECTNESS if data.correctness is not None else 0
    header = _LABELED_HEADER.pack(LABELED_MAGIC, VERSION, data.d, data.n, flags)
    body = _rows_bytes(data.points) + np.ascontiguousarray(data.labels, dtype="<i8").tobytes()
    if data.correctness is not None:
        body += np.ascontiguousarray(data.correctness, dtype=np.uint8).tobytes()
    atomic_write_bytes(path, _seal(header + body))
    logger.info(f"已写入 {data.n} 个带标签嵌入: {path}")


def load_labeled(path: str | Path) -> LabeledEmbeddingSet:
    return _decode_labeled(read_bytes(path), Path(path))


def _decode_labeled(payload: bytes, path: Path) -> LabeledEmbeddingSet:
    if len(payload) < _LABELED_HEADER.size:
        raise TruncatedFileError(f"{path} 过短, 缺少头部")
    magic, version, d, n, flags = _LABELED_HEADER.unpack_from(payload, 0)
    _check_header(magic, LABELED_MAGIC, version, d, path)
    has_correctness = bool(flags & _HAS_CORRECTNESS)
    size = _LABELED_HEADER.size + 4 * n * d + 8 * n + (n if has_correctness else 0)
    _verify(payload, size + _CHECKSUM.size, path)

    offset = _LABELED_HEADER.size
    points = np.frombuffer(payload, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    offset += 4 * n * d
    labels = np.frombuffer(payload, dtype="<i8", count=n, offset=offset)
    offset += 8 * n
    correctness = None
    if has_correctness:
        correctness = np.frombuffer(payload, dtype=np.uint8, count=n, offset=offset).astype(bool)
    return LabeledEmbeddingSet(
        points=validate_rows(points, "points") if n else points,
        labels=labels.copy(),
        correctness=correctness,
    )


def load_points(path: str | Path, modality: Modality = Modality.IMAGE) -> np.ndarray:
    """按 magic 识别文件类型并返回待评分的 (n, d) 点集; SFL1 按 modality 取一侧"""
    path = Path(path)
    payload = read_bytes(path)
    magic = payload[:4]
    if magic == PAIRS_MAGIC:
        return _decode_pairs(payload, path).side(modality)
    if magic == LABELED_MAGIC:
        return _decode_labeled(payload, path).points
    raise FileFormatError(f"{path} 不是嵌入文件: magic {magic!r}")
