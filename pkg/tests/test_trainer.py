"""Tests for trainer: AdamW, warmup, batch gradients and the training loop."""

from dataclasses import replace

import numpy as np
import pytest

from sbfm._compat import RuntimeState
from sbfm.errors import ConfigError, DivergenceError, LayoutError
from sbfm.field_model import init_params, load_checkpoint
from sbfm.manifest import RunManifest
from sbfm.objective import LossConfig, LossReport, draw_training_point
from sbfm.trainer import (
    MANIFEST_NAME,
    AdamState,
    OptimConfig,
    batch_gradient,
    clip_gradient,
    evaluate_loss,
    lr_at,
    optimizer_step,
    train,
    zero_field_loss,
)

SINGLE = RuntimeState(threads=0, deterministic=True, source="default")


def _fast(**overrides):
    base = dict(lr_init=1e-3, lr_peak=1e-3, warmup_steps=1, batch_size=8, max_epochs=3, seed=5)
    base.update(overrides)
    return OptimConfig(**base)


def _run(small_dataset, small_field_config, run_dir, **overrides):
    return train(
        small_dataset, small_field_config, LossConfig(), _fast(**overrides), run_dir, runtime=SINGLE
    )


class TestOptimConfig:
    """OptimConfig defaults and validation."""

    def test_defaults(self):
        config = OptimConfig()
        assert (config.beta1, config.beta2, config.eps) == (0.9, 0.999, 1e-8)
        assert config.weight_decay == 1e-4
        assert config.warmup_steps == 5000

    @pytest.mark.parametrize(
        "kwargs",
        [{"beta1": 1.0}, {"lr_init": 1e-3, "lr_peak": 1e-4}, {"warmup_steps": 0},
         {"batch_size": 0}, {"max_epochs": -1}, {"grad_clip": -1.0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            OptimConfig(**kwargs)


class TestSchedule:
    """Warmup learning rate."""

    def test_warmup_values(self):
        config = OptimConfig()
        assert lr_at(0, config) == pytest.approx(1e-5)
        assert lr_at(2500, config) == pytest.approx(5.5e-5)
        assert lr_at(5000, config) == pytest.approx(1e-4)
        assert lr_at(90000, config) == 1e-4

    def test_monotone(self):
        config = OptimConfig()
        rates = [lr_at(s, config) for s in range(0, 6000, 250)]
        assert rates == sorted(rates)


class TestOptimizerStep:
    """AdamW update."""

    def test_zero_gradient_only_decays(self):
        params = np.array([1.0, -2.0, 4.0])
        config = OptimConfig(weight_decay=0.1)
        updated, _ = optimizer_step(params, np.zeros(3), AdamState.zeros(3), 0, config, lr=0.5)
        assert updated == pytest.approx(params * 0.95)

    def test_zero_learning_rate_is_identity(self):
        rng = np.random.default_rng(0)
        params = rng.standard_normal(6)
        updated, moments = optimizer_step(
            params, rng.standard_normal(6), AdamState.zeros(6), 3, OptimConfig(), lr=0.0
        )
        assert np.array_equal(updated, params)
        assert np.any(moments.m != 0.0)

    def test_first_step_moves_by_learning_rate(self):
        # bias correction makes |m_hat / sqrt(v_hat)| == 1 on step 0
        config = OptimConfig(weight_decay=0.0)
        updated, _ = optimizer_step(
            np.zeros(2), np.array([3.0, -0.5]), AdamState.zeros(2), 0, config, lr=0.01
        )
        assert updated == pytest.approx([-0.01, 0.01], rel=1e-6)

    def test_converges_on_quadratic(self):
        target = np.array([1.0, -2.0, 0.5])
        config = OptimConfig(weight_decay=0.0)
        params, moments = np.zeros(3), AdamState.zeros(3)
        for step in range(3000):
            params, moments = optimizer_step(params, params - target, moments, step, config, lr=1e-2)
        assert np.max(np.abs(params - target)) < 0.05

    def test_non_finite_gradient(self):
        with pytest.raises(DivergenceError) as info:
            optimizer_step(np.zeros(2), np.array([1.0, np.nan]), AdamState.zeros(2), 7, OptimConfig())
        assert info.value.step == 7

    def test_shape_mismatch(self):
        with pytest.raises(LayoutError):
            optimizer_step(np.zeros(2), np.zeros(3), AdamState.zeros(2), 0, OptimConfig())

    def test_clip_gradient(self):
        grads = np.array([3.0, 4.0])
        assert clip_gradient(grads, 1.0) == pytest.approx([0.6, 0.8])
        assert clip_gradient(grads, 10.0) is grads
        assert clip_gradient(grads, 0.0) is grads


class TestBatchEvaluation:
    """Batch gradients and validation losses."""

    def _point(self, dataset, rows, seed=0):
        return draw_training_point(dataset.pair(rows), LossConfig(), np.random.default_rng(seed))

    def test_sharded_gradient_matches_single(self, small_dataset, small_field_config):
        params = init_params(small_field_config, np.random.default_rng(1))
        params = params.with_vector(params.vector + 0.01)
        rows = np.arange(10)
        point = self._point(small_dataset, rows)
        single, report = batch_gradient(params, small_dataset, rows, point, 3.0)
        sharded, sharded_report = batch_gradient(params, small_dataset, rows, point, 3.0, threads=3)
        assert np.allclose(single, sharded, rtol=1e-10, atol=1e-12)
        assert sharded_report.total == pytest.approx(report.total)
        assert sharded_report.batch_size == 10

    def test_initial_field_scores_as_baseline(self, small_dataset, small_field_config):
        params = init_params(small_field_config, np.random.default_rng(2))
        point = self._point(small_dataset, slice(None))
        loss = evaluate_loss(params, small_dataset, point, 3.0, batch_size=7)
        baseline = zero_field_loss(point, 3.0)
        assert loss.total == pytest.approx(baseline.total)
        assert baseline.total > 0.0


class TestTrain:
    """The training loop."""

    def test_manifest_written(self, tmp_path, small_dataset, small_field_config):
        result = _run(small_dataset, small_field_config, tmp_path)
        loaded = RunManifest.load(tmp_path / MANIFEST_NAME)
        assert loaded.status == "completed"
        assert [r.epoch for r in loaded.epochs] == [1, 2, 3]
        assert loaded.selected_checkpoint == result.manifest.selected_checkpoint
        assert loaded.baseline_validation is not None

    def test_steps_per_epoch(self, tmp_path, small_dataset, small_field_config):
        # 36 training pairs in batches of 8
        manifest = _run(small_dataset, small_field_config, tmp_path).manifest
        assert [r.steps for r in manifest.epochs] == [5, 10, 15]

    def test_selects_lowest_validation(self, tmp_path, small_dataset, small_field_config):
        manifest = _run(small_dataset, small_field_config, tmp_path, max_epochs=4).manifest
        best = min(manifest.epochs, key=lambda r: r.validation.total)
        assert manifest.selected_checkpoint == best.checkpoint_id

    def test_keeps_best_and_last(self, tmp_path, small_dataset, small_field_config):
        result = _run(small_dataset, small_field_config, tmp_path, max_epochs=4)
        kept = {p.name for p in tmp_path.glob("epoch-*.ckpt")}
        assert kept == {result.manifest.selected_checkpoint, "epoch-0004.ckpt"}
        assert result.selected_path.exists()
        load_checkpoint(result.selected_path)

    def test_zero_epochs(self, tmp_path, small_dataset, small_field_config):
        result = _run(small_dataset, small_field_config, tmp_path, max_epochs=0)
        assert result.manifest.epochs == []
        assert result.manifest.selected_checkpoint is None
        assert result.selected_path is None
        assert list(tmp_path.glob("*.ckpt")) == []

    def test_same_seed_same_run(self, tmp_path, small_dataset, small_field_config):
        a = _run(small_dataset, small_field_config, tmp_path / "a")
        b = _run(small_dataset, small_field_config, tmp_path / "b")
        assert a.manifest.to_dict(include_timing=False) == b.manifest.to_dict(include_timing=False)
        assert np.array_equal(a.params.vector, b.params.vector)

    def test_seed_changes_run(self, tmp_path, small_dataset, small_field_config):
        a = _run(small_dataset, small_field_config, tmp_path / "a")
        b = _run(small_dataset, small_field_config, tmp_path / "b", seed=6)
        assert not np.array_equal(a.params.vector, b.params.vector)

    def test_learns_below_zero_field(self, tmp_path, small_dataset, small_field_config):
        manifest = _run(
            small_dataset, small_field_config, tmp_path, lr_init=1e-2, lr_peak=1e-2, max_epochs=8
        ).manifest
        assert manifest.best_epoch.validation.total < manifest.baseline_validation.total

    @pytest.mark.parametrize("overrides", [{"heads": "linear"}, {"use_audio_condition": False}])
    def test_ablations_train(self, tmp_path, small_dataset, small_field_config, overrides):
        field_config = replace(small_field_config, **overrides)
        result = train(small_dataset, field_config, LossConfig(), _fast(), tmp_path, runtime=SINGLE)
        assert result.manifest.status == "completed"
        assert load_checkpoint(result.selected_path).config == field_config

    @pytest.mark.parametrize("lam", [1.0, 5.0])
    def test_lambda_recorded(self, tmp_path, small_dataset, small_field_config, lam):
        result = train(
            small_dataset, small_field_config, LossConfig(lam=lam), _fast(), tmp_path, runtime=SINGLE
        )
        train_loss = result.manifest.epochs[0].train
        assert train_loss.total == pytest.approx(train_loss.audio_part + lam * train_loss.video_part)
        assert result.manifest.config["loss"]["lam"] == lam

    def test_divergence_recorded(self, tmp_path, small_dataset, small_field_config, mocker):
        mocker.patch(
            "sbfm.trainer.batch_gradient",
            side_effect=lambda params, *a, **k: (
                np.full(params.size, np.nan), LossReport(0.0, 0.0, 0.0, 1)
            ),
        )
        with pytest.raises(DivergenceError):
            _run(small_dataset, small_field_config, tmp_path)
        manifest = RunManifest.load(tmp_path / MANIFEST_NAME)
        assert manifest.status == "diverged"
        assert manifest.epochs == []
