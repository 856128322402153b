"""参数检查点文件

布局 (小端):
    magic  4s   b"SFCK"
    version u32 (= 1)
    d, H, B, F  u32 ×4
    geometry    u32  几何模式编码
    tensors     float32, 按 tensor_names(B) 的顺序逐个存放, 行优先
    checksum    u64  之前所有字节的 BLAKE2b-64
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from loguru import logger

from ..errors import FileFormatError, TruncatedFileError
from ..models.flow import GeometryMode, Precision
from ..utils.io import atomic_write_bytes, checksum64, read_bytes
from .field_net import FieldParams, tensor_names, tensor_shapes

MAGIC = b"SFCK"
VERSION = 1
_HEADER = struct.Struct("<4s6I")
_CHECKSUM = struct.Struct("<Q")


def encode_checkpoint(params: FieldParams) -> bytes:
    header = _HEADER.pack(
        MAGIC, VERSION, params.d, params.hidden, params.depth, params.freqs,
        params.geometry_mode.code,
    )
    body = b"".join(
        np.ascontiguousarray(params[name], dtype="<f4").tobytes()
        for name in tensor_names(params.depth)
    )
    payload = header + body
    return payload + _CHECKSUM.pack(checksum64(payload))


def decode_checkpoint(payload: bytes, precision: Precision = Precision.FLOAT32) -> FieldParams:
    if len(payload) < _HEADER.size + _CHECKSUM.size:
        raise TruncatedFileError("检查点文件过短, 缺少头部")
    magic, version, d, hidden, depth, freqs, mode_code = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise FileFormatError(f"检查点 magic 错误: {magic!r}")
    if version != VERSION:
        raise FileFormatError(f"不支持的检查点版本: {version}")
    if d < 2 or hidden < 1 or freqs < 1:
        raise FileFormatError(f"检查点头部无效: d={d}, H={hidden}, B={depth}, F={freqs}")

    shapes = tensor_shapes(d, hidden, depth, freqs)
    names = tensor_names(depth)
    expected = _HEADER.size + 4 * sum(int(np.prod(shapes[n])) for n in names) + _CHECKSUM.size
    if len(payload) < expected:
        raise TruncatedFileError(f"检查点被截断: {len(payload)} 字节, 期望 {expected}")
    if len(payload) > expected:
        raise FileFormatError(f"检查点末尾有多余数据: {len(payload)} 字节, 期望 {expected}")

    (stored,) = _CHECKSUM.unpack_from(payload, expected - _CHECKSUM.size)
    if stored != checksum64(payload[: expected - _CHECKSUM.size]):
        raise FileFormatError("检查点校验和不匹配")

    tensors: dict[str, np.ndarray] = {}
    offset = _HEADER.size
    for name in names:
        count = int(np.prod(shapes[name]))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(shapes[name]).astype(np.float64)
        offset += 4 * count
    return FieldParams(
        d=d, hidden=hidden, depth=depth, freqs=freqs, tensors=tensors,
        geometry_mode=GeometryMode.from_code(mode_code), precision=precision,
    )


def save_checkpoint(params: FieldParams, path: str | Path) -> None:
    atomic_write_bytes(path, encode_checkpoint(params))
    logger.info(f"检查点已写入: {path} ({params.num_parameters()} 个参数)")


def load_checkpoint(path: str | Path, precision: Precision = Precision.FLOAT32) -> FieldParams:
    params = decode_checkpoint(read_bytes(path), precision=precision)
    logger.debug(f"已加载检查点 {path}: d={params.d}, H={params.hidden}, B={params.depth}")
    return params
