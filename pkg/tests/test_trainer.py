"""训练服务测试"""

import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.data.synthetic import pairs_from_synthetic
from src.errors import DegenerateGeodesicError, NumericalError, ShapeMismatchError
from src.geometry.sphere import batch_geodesic_distance, batch_target_velocity, sample_uniform_batch
from src.models.data import EmbeddingPairSet
from src.models.flow import FlowConfig, GeometryMode
from src.models.geometry import Modality, TangentVector
from src.network.checkpoint import load_checkpoint
from src.network.field_net import FlowBatch, forward_batch, loss_and_param_grad
from src.services import trainer_service
from src.services.optimizer import TrainState, apply_adamw, lr_at
from src.services.trainer_service import (
    TrainerService, fit, sample_training_batch, sample_training_tuple, sidecar_path, train_step,
)
from tests.helpers import (
    constant_pairs, make_toy_params, make_zero_params, random_tangent_batch, vmf_spec,
)


def _cfg(**overrides):
    base = dict(
        d=3, hidden=16, depth=1, freqs=4, batch_size=32, total_steps=5,
        warmup_steps=0, learning_rate=1e-3, log_every=2,
    )
    base.update(overrides)
    return FlowConfig(**base)


def _e1_pairs(n=8):
    rows = np.zeros((n, 3), dtype=np.float32)
    rows[:, 0] = 1.0
    return EmbeddingPairSet(image=rows, text=rows.copy())


class TestLearningRate:
    """学习率计划测试"""

    def test_warmup_then_constant(self):
        """测试线性预热后恒定"""
        cfg = _cfg(learning_rate=1e-5, warmup_steps=1000)
        assert lr_at(0, cfg) == 0.0
        assert lr_at(500, cfg) == pytest.approx(5e-6)
        assert lr_at(1000, cfg) == pytest.approx(1e-5)
        assert lr_at(400_000, cfg) == pytest.approx(1e-5)

    def test_no_warmup(self):
        """测试无预热时恒定"""
        cfg = _cfg(learning_rate=3e-4, warmup_steps=0)
        assert lr_at(0, cfg) == lr_at(10, cfg) == 3e-4


class TestSampling:
    """训练目标抽样测试"""

    def test_modality_frequency(self, rng):
        """测试模态以 0.5 的概率抽取"""
        pairs = constant_pairs()
        batch = sample_training_batch(pairs, GeometryMode.RIEMANNIAN, 20_000, rng)
        assert abs(batch.c.mean() - 0.5) < 0.02

    def test_targets_tangent(self, rng):
        """测试 z_t 在球面上且 u_t 在切空间中"""
        data = sample_uniform_batch(100, 8, rng)
        pairs = EmbeddingPairSet(image=data, text=data[::-1].copy())
        batch = sample_training_batch(pairs, GeometryMode.RIEMANNIAN, 512, rng)
        assert np.max(np.abs(np.linalg.norm(batch.zt, axis=1) - 1.0)) < 1e-9
        assert np.max(np.abs(np.sum(batch.zt * batch.ut, axis=1))) < 1e-7

    def test_endpoint_is_data(self, rng):
        """测试 t=1 时 z_t 即为所选模态的数据点"""
        batch = sample_training_batch(constant_pairs(), GeometryMode.RIEMANNIAN, 64, rng, t=1.0)
        expected = np.where((batch.c == 0)[:, None], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        assert_allclose(batch.zt, expected, atol=1e-6)

    def test_euclidean_straight_line(self, rng):
        """测试欧氏模式沿直线插值"""
        batch = sample_training_batch(constant_pairs(), GeometryMode.EUCLIDEAN_GAUSSIAN_BASE, 64, rng)
        z1 = np.where((batch.c == 0)[:, None], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        z0 = z1 - batch.ut
        assert_allclose(batch.zt, (1.0 - batch.t)[:, None] * z0 + batch.t[:, None] * z1, atol=1e-12)

    def test_antipodal_resampled(self, rng, monkeypatch):
        """测试与数据点对径的 z₀ 被重新抽取"""
        real = trainer_service.sample_uniform_batch
        calls = []

        def fake(n, d, gen):
            calls.append(n)
            if len(calls) == 1:
                out = np.zeros((n, d))
                out[:, 0] = -1.0
                return out
            return real(n, d, gen)

        monkeypatch.setattr(trainer_service, "sample_uniform_batch", fake)
        batch = sample_training_batch(_e1_pairs(), GeometryMode.RIEMANNIAN, 4, rng)
        assert len(calls) == 2
        assert np.all(np.isfinite(batch.ut))

    def test_antipodal_gives_up(self, rng, monkeypatch):
        """测试重采样次数用尽后报错"""
        def always_antipodal(n, d, gen):
            out = np.zeros((n, d))
            out[:, 0] = -1.0
            return out

        monkeypatch.setattr(trainer_service, "sample_uniform_batch", always_antipodal)
        with pytest.raises(DegenerateGeodesicError):
            sample_training_batch(_e1_pairs(), GeometryMode.RIEMANNIAN, 4, rng)

    def test_training_tuple(self, rng):
        """测试单个训练目标的类型化视图"""
        item = sample_training_tuple(constant_pairs(), _cfg(), rng)
        assert isinstance(item.c, Modality)
        assert 0.0 <= item.t <= 1.0
        assert isinstance(item.velocity, TangentVector)


class TestOptimizer:
    """AdamW 测试"""

    def test_zero_lr_keeps_params_bitwise(self, rng):
        """测试 lr=0 时参数逐位不变"""
        params = make_toy_params(d=5).astype(_cfg().precision)
        state = TrainState.fresh(params, rng)
        new_state, _ = train_step(state, random_tangent_batch(16, 5, rng), _cfg(d=5), lr=0.0)
        for name in params.names():
            assert np.array_equal(new_state.params[name], params[name]), name
        assert new_state.step == 1

    def test_decoupled_weight_decay(self, rng):
        """测试零梯度时只有权重衰减生效"""
        params = make_toy_params()
        state = TrainState.fresh(params, rng)
        cfg = _cfg(d=5, weight_decay=0.1)
        new_state = apply_adamw(state, params.zeros_like(), 0.5, cfg)
        assert_allclose(new_state.params.flat(), params.flat() * 0.95, rtol=1e-12)
        assert not np.any(new_state.m.flat())

    def test_first_step_is_sign(self, rng):
        """测试第一步更新约为 -lr·sign(g)"""
        params = make_toy_params()
        state = TrainState.fresh(params, rng)
        grad = params.like({
            n: rng.choice([-1.0, 1.0], size=a.shape) * (0.5 + rng.random(a.shape))
            for n, a in params.tensors.items()
        })
        new_state = apply_adamw(state, grad, 1e-3, _cfg(d=5, weight_decay=0.0))
        delta = new_state.params.flat() - params.flat()
        assert_allclose(delta, -1e-3 * np.sign(grad.flat()), rtol=1e-6)

    def test_frozen_params_untouched(self, rng):
        """测试冻结参数不被更新"""
        params = make_toy_params()
        params.frozen = True
        state = TrainState.fresh(params, rng)
        new_state = apply_adamw(state, params.zeros_like(), 0.5, _cfg(d=5, weight_decay=0.1))
        assert new_state.params is params
        assert new_state.step == 1

    def test_buffer_shape_mismatch(self, rng):
        """测试动量缓冲形状不一致"""
        params = make_toy_params()
        other = make_toy_params(hidden=8)
        with pytest.raises(ShapeMismatchError):
            TrainState(params=params, m=other, v=params.zeros_like(), step=0, rng=rng)


class TestTrainStep:
    """单步训练测试"""

    def test_nan_reports_step(self, rng):
        """测试非有限激活时报告步数"""
        params = make_toy_params()
        params.tensors["input.weight"][0, 0] = np.nan
        state = TrainState.fresh(params, rng)
        with pytest.raises(NumericalError) as exc:
            train_step(state, random_tangent_batch(4, 5, rng), _cfg(d=5))
        assert exc.value.step == 1

    def test_per_modality_losses(self, rng):
        """测试分模态损失的加权平均等于总损失"""
        params = make_toy_params()
        batch = random_tangent_batch(64, 5, rng)
        _, metrics = train_step(TrainState.fresh(params, rng), batch, _cfg(d=5))
        n_txt = int(batch.c.sum())
        combined = (metrics.loss_image * (64 - n_txt) + metrics.loss_text * n_txt) / 64
        assert combined == pytest.approx(metrics.loss)
        assert metrics.step == 1 and metrics.grad_norm > 0.0


class TestTrainerService:
    """训练服务测试"""

    def test_deterministic(self):
        """测试同一配置与种子得到相同参数"""
        a = fit(constant_pairs(), _cfg())
        b = fit(constant_pairs(), _cfg())
        assert np.array_equal(a.flat(), b.flat())

    def test_zero_steps(self, tmp_path):
        """测试零步训练输出初始参数"""
        ck = tmp_path / "model.sfck"
        params = fit(constant_pairs(), _cfg(total_steps=0), checkpoint_path=ck)
        assert not np.any(params["output.weight"])
        meta = json.loads(sidecar_path(ck).read_text(encoding="utf-8"))
        assert meta["step"] == 0 and meta["loss"] is None

    def test_loss_decreases(self):
        """测试短训练后损失下降"""
        cfg = _cfg(hidden=32, depth=2, freqs=8, batch_size=256, total_steps=200, learning_rate=3e-3)
        service = TrainerService(cfg)
        service.fit(constant_pairs())
        losses = [m.loss for m in service.history]
        assert np.mean(losses[-20:]) < 0.8 * np.mean(losses[:20])

    def test_outputs_and_callbacks(self, tmp_path):
        """测试指标文件、检查点、元数据与回调"""
        ck = tmp_path / "out" / "checkpoint.sfck"
        metrics_path = tmp_path / "out" / "metrics.jsonl"
        seen, saved = [], []
        service = TrainerService(_cfg(), checkpoint_path=ck, metrics_path=metrics_path)
        service.set_callbacks(on_metrics=seen.append, on_checkpoint=lambda step, path: saved.append(step))
        params = service.fit(constant_pairs())

        lines = [json.loads(line) for line in metrics_path.read_text(encoding="utf-8").splitlines()]
        assert [r["step"] for r in lines] == [2, 4, 5]
        assert set(lines[0]) >= {"step", "loss", "lr", "grad_norm"}
        assert [m.step for m in seen] == [2, 4, 5]
        assert saved == [5]

        restored = load_checkpoint(ck)
        assert np.array_equal(restored.flat(), params.flat())
        meta = json.loads(sidecar_path(ck).read_text(encoding="utf-8"))
        assert meta["step"] == 5
        assert meta["config"]["d"] == 3
        assert meta["initial_loss"] == pytest.approx(service.history[0].loss)

    def test_periodic_checkpoints(self, tmp_path):
        """测试按间隔写检查点"""
        saved = []
        service = TrainerService(_cfg(total_steps=6, checkpoint_every=2), checkpoint_path=tmp_path / "c.sfck")
        service.set_callbacks(on_checkpoint=lambda step, path: saved.append(step))
        service.fit(constant_pairs())
        assert saved == [2, 4, 6]

    def test_dimension_mismatch(self):
        """测试数据维度与配置不一致"""
        with pytest.raises(ShapeMismatchError):
            TrainerService(_cfg(d=4)).initialize(constant_pairs(d=3))

    def test_max_pairs(self):
        """测试数据规模消融"""
        pairs = TrainerService(_cfg(max_pairs=10)).initialize(constant_pairs(n=64))
        assert pairs.n_pairs == 10


class TestInitialLoss:
    """零初始化下的损失"""

    def test_zero_field_loss_is_mean_squared_angle(self, rng):
        """测试输出层为 0 时损失恰为 mean ‖u_t‖² = mean θ²"""
        params = make_zero_params(d=3)
        z0 = sample_uniform_batch(64, 3, rng)
        z1 = sample_uniform_batch(64, 3, rng)
        t = rng.random(64)
        ut, zt = batch_target_velocity(z0, z1, t)
        batch = FlowBatch(zt=zt, t=t, c=rng.integers(0, 2, 64), ut=ut)
        loss, _ = loss_and_param_grad(params, batch)
        assert loss == pytest.approx(float(np.mean(np.sum(ut ** 2, axis=1))), rel=1e-12)
        assert loss == pytest.approx(float(np.mean(batch_geodesic_distance(z0, z1) ** 2)), rel=1e-10)

    def test_first_step_loss_matches_expected_angle(self):
        """测试首步损失接近 E[θ²] = (π² - 4) / 2 (S² 上均匀 z₀ 到固定 z₁)"""
        service = TrainerService(_cfg(batch_size=4096, total_steps=1))
        service.fit(constant_pairs())
        assert service.history[0].loss == pytest.approx((math.pi ** 2 - 4.0) / 2.0, abs=0.15)


class TestTwoModalities:
    """两个模态分布不同时的训练"""

    def test_field_separates_modalities(self):
        """测试图像侧 e₁ / 文本侧 e₂ 训练后两个模态的场不同且各自损失下降"""
        cfg = _cfg(hidden=32, depth=2, freqs=8, batch_size=256, total_steps=400, learning_rate=3e-3)
        service = TrainerService(cfg)
        params = service.fit(constant_pairs())

        loss_image = [m.loss_image for m in service.history]
        loss_text = [m.loss_text for m in service.history]
        assert np.nanmean(loss_image[-20:]) < 0.8 * np.nanmean(loss_image[:20])
        assert np.nanmean(loss_text[-20:]) < 0.8 * np.nanmean(loss_text[:20])

        z = sample_uniform_batch(64, 3, np.random.default_rng(7))
        v_image, _ = forward_batch(params, z, 0.5, int(Modality.IMAGE))
        v_text, _ = forward_batch(params, z, 0.5, int(Modality.TEXT))
        assert np.mean(np.linalg.norm(v_image - v_text, axis=1)) > 0.5


@pytest.mark.slow
class TestConcentratedTarget:
    """集中分布上的较长训练"""

    def test_vmf50_loss_drops_below_quarter(self):
        """测试 κ=50 的 vMF 训练后损失低于初始值的 25%"""
        pairs = pairs_from_synthetic(vmf_spec(kappa=50.0, count=20_000),
                                     vmf_spec(kappa=50.0, count=20_000, seed=1))
        cfg = FlowConfig(d=3, hidden=64, depth=3, freqs=16, batch_size=256, total_steps=8000,
                         warmup_steps=500, learning_rate=1e-3, log_every=1000)
        service = TrainerService(cfg)
        service.fit(pairs)
        final = np.mean([m.loss for m in service.history[-500:]])
        assert final < 0.25 * service.history[0].loss
