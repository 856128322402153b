"""文件读写工具: 原子写入、校验和、行式记录"""

from __future__ import annotations

import gzip
import hashlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import IO, Any, Iterable, Iterator, Mapping

from loguru import logger

from ..errors import FileFormatError, InputNotFoundError, InvalidInputError


GZIP_MAGIC = b"\x1f\x8b"


def is_gzip_path(path: Path) -> bool:
    return path.suffix == ".gz"


def read_bytes(path: str | Path) -> bytes:
    """读取文件, .gz 后缀自动解压"""
    path = Path(path)
    if not path.exists():
        raise InputNotFoundError(f"文件不存在: {path}")
    payload = path.read_bytes()
    if not is_gzip_path(path) and payload[:2] == GZIP_MAGIC:
        logger.warning(f"{path} 没有 .gz 后缀但内容是 gzip, 按压缩文件读取")
    elif not is_gzip_path(path):
        return payload
    try:
        return gzip.decompress(payload)
    except (OSError, EOFError) as e:
        raise FileFormatError(f"{path} 解压失败: {e}") from e


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    """先写临时文件再改名; .gz 后缀自动压缩 (mtime 固定为 0, 保证可复现)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if is_gzip_path(path):
        payload = gzip.compress(payload, mtime=0)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def checksum64(payload: bytes) -> int:
    """64 位 BLAKE2b 校验和"""
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def file_checksum(path: str | Path) -> str:
    """文件内容的 SHA-256 (运行清单中用于确定性比对)"""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _format_value(value: Any) -> str:
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return "null"
        return f"{value:.17g}"
    if isinstance(value, int):
        return str(value)
    return json.dumps(value, ensure_ascii=False)


def dumps_record(record: Mapping[str, Any]) -> str:
    """单行 JSON 记录, 浮点数固定 17 位有效数字, 键顺序保持插入顺序"""
    body = ", ".join(f"{json.dumps(k)}: {_format_value(v)}" for k, v in record.items())
    return "{" + body + "}"


def write_records(path: str | Path, records: Iterable[Mapping[str, Any]]) -> None:
    lines = [dumps_record(r) for r in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def append_record(fh: IO[str], record: Mapping[str, Any]) -> None:
    fh.write(dumps_record(record) + "\n")
    fh.flush()


def read_records(path: str | Path) -> Iterator[dict[str, Any]]:
    """读取行式 JSON 记录"""
    text = read_bytes(path).decode("utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"{path}:{lineno} 不是合法的 JSON 记录: {e}") from e


def write_json(path: str | Path, payload: Mapping[str, Any]) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, ensure_ascii=False, default=str) + "\n")
