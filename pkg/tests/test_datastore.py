"""嵌入文件读写测试"""

import struct

import numpy as np
import pytest

from src.data.store import (
    load_labeled, load_pairs, load_points, save_labeled, save_pairs, subsample_pairs,
    validate_rows,
)
from src.errors import (
    FileFormatError, InvalidInputError, NonFiniteDataError, ShapeMismatchError, TruncatedFileError,
)
from src.geometry.sphere import sample_uniform_batch
from src.models.data import EmbeddingPairSet, LabeledEmbeddingSet
from src.models.geometry import Modality
from src.utils.io import checksum64


def _pairs(n=20, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingPairSet(image=sample_uniform_batch(n, d, rng), text=sample_uniform_batch(n, d, rng))


def _raw_pairs_file(path, image, text, d=None, magic=b"SFL1"):
    """手工拼装 SFL1 文件 (可写入非法内容)"""
    n = image.shape[0]
    d = image.shape[1] if d is None else d
    payload = struct.pack("<4sIIQ", magic, 1, d, n)
    payload += image.astype("<f4").tobytes() + text.astype("<f4").tobytes()
    path.write_bytes(payload + struct.pack("<Q", checksum64(payload)))
    return path


class TestPairsFile:
    """SFL1 文件测试"""

    def test_roundtrip(self, tmp_path):
        """测试写入后读回 (float32 逐位一致)"""
        pairs = _pairs()
        save_pairs(pairs, tmp_path / "p.sfl")
        loaded = load_pairs(tmp_path / "p.sfl")
        assert loaded.n_pairs == 20 and loaded.d == 4
        assert np.allclose(loaded.image, pairs.image, atol=1e-7)
        assert np.allclose(loaded.text, pairs.text, atol=1e-7)

    def test_gzip_roundtrip(self, tmp_path):
        """测试 .gz 压缩文件"""
        pairs = _pairs()
        save_pairs(pairs, tmp_path / "p.sfl.gz")
        assert np.allclose(load_pairs(tmp_path / "p.sfl.gz").image, pairs.image, atol=1e-7)

    def test_nan_rows_reported(self, tmp_path):
        """测试 NaN 行被拒绝并给出行号"""
        pairs = _pairs()
        image = pairs.image.copy()
        image[3, 1] = np.nan
        image[11, 0] = np.inf
        path = _raw_pairs_file(tmp_path / "bad.sfl", image, pairs.text)
        with pytest.raises(NonFiniteDataError) as exc:
            load_pairs(path)
        assert exc.value.rows == [3, 11]

    def test_truncated_rows(self, tmp_path):
        """测试头部声明 d=512 而数据行只有 511 维"""
        rng = np.random.default_rng(1)
        short = sample_uniform_batch(4, 511, rng)
        path = _raw_pairs_file(tmp_path / "short.sfl", short, short, d=512)
        with pytest.raises(TruncatedFileError):
            load_pairs(path)

    def test_bad_magic(self, tmp_path):
        """测试 magic 错误"""
        pairs = _pairs()
        path = _raw_pairs_file(tmp_path / "m.sfl", pairs.image, pairs.text, magic=b"NOPE")
        with pytest.raises(FileFormatError):
            load_pairs(path)

    def test_zero_dimension(self, tmp_path):
        """测试头部维度为 0"""
        path = tmp_path / "zero.sfl"
        payload = struct.pack("<4sIIQ", b"SFL1", 1, 0, 3)
        path.write_bytes(payload + struct.pack("<Q", checksum64(payload)))
        with pytest.raises(FileFormatError):
            load_pairs(path)

    def test_checksum_mismatch(self, tmp_path):
        """测试校验和不匹配"""
        pairs = _pairs()
        save_pairs(pairs, tmp_path / "p.sfl")
        raw = bytearray((tmp_path / "p.sfl").read_bytes())
        raw[30] ^= 0x01
        (tmp_path / "p.sfl").write_bytes(bytes(raw))
        with pytest.raises(FileFormatError):
            load_pairs(tmp_path / "p.sfl")

    def test_unnormalized_rows_rejected(self, tmp_path):
        """测试范数明显偏离 1 的行被拒绝"""
        pairs = _pairs()
        image = pairs.image * 1.5
        path = _raw_pairs_file(tmp_path / "scaled.sfl", image, pairs.text)
        with pytest.raises(InvalidInputError):
            load_pairs(path)

    def test_slightly_off_rows_renormalized(self):
        """测试轻微偏离的行被重新归一化"""
        rows = np.array([[1.004, 0.0, 0.0], [0.0, 0.0, 0.997]])
        out = validate_rows(rows, "image")
        assert out.dtype == np.float32
        assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-6)

    def test_shape_mismatch(self):
        """测试两侧形状不一致"""
        with pytest.raises(ShapeMismatchError):
            EmbeddingPairSet(image=np.ones((3, 4)), text=np.ones((3, 5)))

    def test_subsample(self):
        """测试按种子子采样"""
        pairs = _pairs(n=50)
        a = subsample_pairs(pairs, 10, seed=3)
        b = subsample_pairs(pairs, 10, seed=3)
        assert a.n_pairs == 10
        assert np.array_equal(a.image, b.image)
        assert subsample_pairs(pairs, 100, seed=3) is pairs


class TestLabeledFile:
    """SFLE 文件测试"""

    def test_roundtrip_with_correctness(self, tmp_path):
        """测试带正确性标记的读写"""
        rng = np.random.default_rng(2)
        data = LabeledEmbeddingSet(
            points=sample_uniform_batch(12, 3, rng),
            labels=rng.integers(0, 5, 12),
            correctness=rng.integers(0, 2, 12).astype(bool),
        )
        save_labeled(data, tmp_path / "e.sfle")
        loaded = load_labeled(tmp_path / "e.sfle")
        assert np.array_equal(loaded.labels, data.labels)
        assert np.array_equal(loaded.correctness, data.correctness)
        assert np.allclose(loaded.points, data.points, atol=1e-7)

    def test_roundtrip_without_correctness(self, tmp_path):
        """测试不带正确性标记"""
        rng = np.random.default_rng(3)
        data = LabeledEmbeddingSet(points=sample_uniform_batch(5, 4, rng), labels=np.array([0, 1, 0, 1, 1]))
        save_labeled(data, tmp_path / "e.sfle")
        assert load_labeled(tmp_path / "e.sfle").correctness is None

    def test_label_length_mismatch(self):
        """测试标签长度不一致"""
        with pytest.raises(ShapeMismatchError):
            LabeledEmbeddingSet(points=np.eye(3), labels=np.zeros(2))


class TestLoadPoints:
    """按文件类型加载待评分点"""

    def test_pairs_side(self, tmp_path):
        """测试 SFL1 按模态取一侧"""
        pairs = _pairs()
        save_pairs(pairs, tmp_path / "p.sfl")
        text = load_points(tmp_path / "p.sfl", Modality.TEXT)
        assert np.allclose(text, pairs.text, atol=1e-7)

    def test_labeled(self, tmp_path):
        """测试 SFLE 返回全部点"""
        data = LabeledEmbeddingSet(points=np.eye(3), labels=np.zeros(3))
        save_labeled(data, tmp_path / "e.sfle")
        assert load_points(tmp_path / "e.sfle").shape == (3, 3)

    def test_unknown_magic(self, tmp_path):
        """测试未知文件类型"""
        (tmp_path / "x.bin").write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(FileFormatError):
            load_points(tmp_path / "x.bin")


class TestCompression:
    """gzip 处理"""

    def test_gzip_without_suffix(self, tmp_path):
        """测试没有 .gz 后缀的压缩文件仍可读取"""
        pairs = _pairs()
        save_pairs(pairs, tmp_path / "p.sfl.gz")
        (tmp_path / "p.sfl.gz").rename(tmp_path / "renamed.sfl")
        assert load_pairs(tmp_path / "renamed.sfl").n_pairs == 20

    def test_corrupt_gzip(self, tmp_path):
        """测试损坏的压缩文件"""
        (tmp_path / "bad.sfl.gz").write_bytes(b"\x1f\x8bnot really gzip")
        with pytest.raises(FileFormatError):
            load_pairs(tmp_path / "bad.sfl.gz")
