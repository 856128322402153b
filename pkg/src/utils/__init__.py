"""工具模块"""

from .io import (
    append_record, atomic_write_bytes, atomic_write_text, checksum64, dumps_record,
    file_checksum, read_bytes, read_records, write_json, write_records,
)

__all__ = [
    "append_record", "atomic_write_bytes", "atomic_write_text", "checksum64", "dumps_record",
    "file_checksum", "read_bytes", "read_records", "write_json", "write_records",
]
