"""检查点文件测试"""

import numpy as np
import pytest

from src.errors import FileFormatError, InputNotFoundError, TruncatedFileError
from src.models.flow import GeometryMode, Precision
from src.network.checkpoint import (
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
)
from tests.helpers import make_toy_params


@pytest.fixture
def params():
    return make_toy_params(geometry_mode=GeometryMode.EUCLIDEAN_GAUSSIAN_BASE).astype(Precision.FLOAT32)


class TestCheckpoint:
    """检查点编解码测试"""

    def test_roundtrip_bit_exact(self, params):
        """测试 float32 参数写入后逐位还原"""
        restored = decode_checkpoint(encode_checkpoint(params))
        assert (restored.d, restored.hidden, restored.depth, restored.freqs) == (5, 16, 2, 4)
        assert restored.geometry_mode is GeometryMode.EUCLIDEAN_GAUSSIAN_BASE
        for name in params.names():
            assert np.array_equal(restored[name], params[name]), name

    def test_encoding_deterministic(self, params):
        """测试同一参数编码结果相同"""
        assert encode_checkpoint(params) == encode_checkpoint(params.copy())

    def test_float64_load(self, params):
        """测试以 float64 精度加载"""
        restored = decode_checkpoint(encode_checkpoint(params), precision=Precision.FLOAT64)
        assert restored["input.weight"].dtype == np.float64

    def test_truncated(self, params):
        """测试截断文件"""
        payload = encode_checkpoint(params)
        with pytest.raises(TruncatedFileError):
            decode_checkpoint(payload[:-20])
        with pytest.raises(TruncatedFileError):
            decode_checkpoint(payload[:10])

    def test_bad_magic(self, params):
        """测试 magic 错误"""
        payload = encode_checkpoint(params)
        with pytest.raises(FileFormatError):
            decode_checkpoint(b"XXXX" + payload[4:])

    def test_corrupted_body(self, params):
        """测试校验和检出损坏"""
        payload = bytearray(encode_checkpoint(params))
        payload[40] ^= 0xFF
        with pytest.raises(FileFormatError):
            decode_checkpoint(bytes(payload))

    def test_trailing_bytes(self, params):
        """测试末尾多余数据"""
        with pytest.raises(FileFormatError):
            decode_checkpoint(encode_checkpoint(params) + b"\x00")

    def test_file_roundtrip(self, params, tmp_path):
        """测试文件读写 (含 gzip)"""
        for name in ("model.sfck", "model.sfck.gz"):
            path = tmp_path / name
            save_checkpoint(params, path)
            restored = load_checkpoint(path)
            assert np.array_equal(restored.flat(), params.flat())

    def test_missing_file(self, tmp_path):
        """测试文件不存在"""
        with pytest.raises(InputNotFoundError):
            load_checkpoint(tmp_path / "nope.sfck")
