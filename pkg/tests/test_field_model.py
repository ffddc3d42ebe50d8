"""Tests for field_model: layout, forward, backward and checkpoints."""

import json

import numpy as np
import pytest

from sbfm.errors import ConfigError, FormatError, LayoutError, NumericError
from sbfm.field_model import (
    CHECKPOINT_MAGIC,
    FieldConfig,
    FieldParams,
    backward,
    batch_loss,
    build_layers,
    build_layout,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    time_embedding,
    trunk_input,
    zero_params,
)


def _tiny(**overrides):
    base = dict(
        d_a=3, d_v_total=4, trunk_width=6, trunk_depth=2, head_width=5, head_depth=1,
        cond_dim=2, time_embed_dim=4,
    )
    base.update(overrides)
    return FieldConfig(**base)


def _inputs(config, n=3, seed=0):
    rng = np.random.default_rng(seed)
    return (
        rng.standard_normal((n, config.d_a + config.d_v_total)),
        rng.uniform(0.05, 0.95, size=n),
        rng.standard_normal((n, config.time_embed_dim)),
        rng.standard_normal((n, config.cond_dim)),
    )


def _random_params(config, seed=1):
    params = zero_params(config)
    return params.with_vector(0.5 * np.random.default_rng(seed).standard_normal(params.size))


class TestFieldConfig:
    """FieldConfig defaults and validation."""

    def test_defaults(self):
        config = FieldConfig()
        assert config.d_a == 32
        assert config.d_v_total == 128
        assert config.activation == "tanh"
        assert config.input_dim == 32 + 128 + 16 + 4

    def test_odd_time_embedding_rejected(self):
        with pytest.raises(ConfigError):
            _tiny(time_embed_dim=3)

    def test_unknown_activation_rejected(self):
        with pytest.raises(ConfigError):
            _tiny(activation="relu")

    def test_linear_heads_have_no_hidden_layers(self):
        layers = build_layers(_tiny(heads="linear", head_depth=3))
        assert [l.name for l in layers["head_a"]] == ["head_a.out"]

    def test_digest_tracks_fields(self):
        assert _tiny().digest() == _tiny().digest()
        assert _tiny().digest() != _tiny(trunk_width=7).digest()


class TestLayout:
    """Parameter layout table."""

    def test_layout_covers_vector(self):
        config = _tiny()
        slots = build_layout(config)
        assert slots[0].offset == 0
        for a, b in zip(slots, slots[1:]):
            assert b.offset == a.offset + a.size
        assert zero_params(config).size == slots[-1].offset + slots[-1].size

    def test_tensor_is_view(self):
        params = zero_params(_tiny())
        params.tensor("trunk.0.b")[...] = 1.0
        assert params.vector.sum() == 6.0

    def test_wrong_vector_size(self):
        with pytest.raises(LayoutError):
            FieldParams(_tiny(), np.zeros(3))


class TestInit:
    """Initialisation."""

    def test_init_is_zero_field(self):
        config = _tiny()
        params = init_params(config, np.random.default_rng(0))
        v_a, v_v = forward(params, *_inputs(config))
        assert np.all(v_a == 0.0)
        assert np.all(v_v == 0.0)

    def test_trunk_weights_bounded(self):
        config = _tiny()
        params = init_params(config, np.random.default_rng(0))
        w = params.tensor("trunk.0.W")
        assert np.abs(w).max() <= 2.0 / np.sqrt(config.input_dim) + 1e-12
        assert np.any(w != 0.0)

    def test_init_deterministic(self):
        config = _tiny()
        a = init_params(config, np.random.default_rng(4)).vector
        b = init_params(config, np.random.default_rng(4)).vector
        assert np.array_equal(a, b)


class TestForward:
    """Forward evaluation."""

    def test_time_embedding_shape(self):
        assert time_embedding(0.3, 8).shape == (8,)
        assert time_embedding(np.array([0.1, 0.2]), 8).shape == (2, 8)

    def test_time_embedding_at_zero(self):
        emb = time_embedding(0.0, 4)
        assert emb.tolist() == [0.0, 0.0, 1.0, 1.0]

    def test_output_shapes(self):
        config = _tiny()
        v_a, v_v = forward(_random_params(config), *_inputs(config, n=5))
        assert v_a.shape == (5, 3)
        assert v_v.shape == (5, 4)

    def test_audio_condition_ablation(self):
        config = _tiny(use_audio_condition=False)
        x, t, phi_a, phi_v = _inputs(config)
        with_code = trunk_input(config, x, t, phi_a, phi_v)
        without_code = trunk_input(config, x, t, np.zeros_like(phi_a), phi_v)
        assert np.array_equal(with_code, without_code)

    def test_time_embedding_lipschitz(self):
        t = np.linspace(0.0, 1.0, 101)
        delta = np.abs(time_embedding(t + 1e-9, 16) - time_embedding(t, 16))
        assert delta.max() <= 1e-6

    @pytest.mark.parametrize("zeroed, kept", [("head_v", 0), ("head_a", 1)])
    def test_heads_are_separate(self, zeroed, kept):
        config = _tiny()
        params = _random_params(config)
        inputs = _inputs(config)
        before = forward(params, *inputs)
        for slot in params.layout:
            if slot.name.startswith(zeroed + "."):
                params.tensor(slot.name)[...] = 0.0
        after = forward(params, *inputs)
        assert np.array_equal(after[kept], before[kept])
        assert np.all(after[1 - kept] == 0.0)

    def test_trunk_unit_permutation(self):
        config = _tiny()
        params = _random_params(config)
        inputs = _inputs(config)
        v_a, v_v = forward(params, *inputs)

        swapped = params.copy()
        order = [2, 0, 1, 3, 5, 4]
        swapped.tensor("trunk.0.W")[...] = params.tensor("trunk.0.W")[order]
        swapped.tensor("trunk.0.b")[...] = params.tensor("trunk.0.b")[order]
        swapped.tensor("trunk.1.W")[...] = params.tensor("trunk.1.W")[:, order]
        s_a, s_v = forward(swapped, *inputs)
        assert np.allclose(s_a, v_a, rtol=0.0, atol=1e-12)
        assert np.allclose(s_v, v_v, rtol=0.0, atol=1e-12)

    def test_pinned_output(self):
        # one trunk unit with pre-activation 0.25 feeding two linear heads
        config = FieldConfig(
            d_a=1, d_v_total=1, trunk_width=1, trunk_depth=1, head_width=1, head_depth=0,
            cond_dim=1, time_embed_dim=2, heads="linear",
        )
        params = zero_params(config)
        params.tensor("trunk.0.W")[...] = [[1.0, 2.0, 3.0, 4.0, 0.5]]
        params.tensor("trunk.0.b")[...] = [-4.0]
        params.tensor("head_a.out.W")[...] = [[2.0]]
        params.tensor("head_a.out.b")[...] = [0.5]
        params.tensor("head_v.out.W")[...] = [[-1.0]]
        v_a, v_v = forward(params, np.array([0.5, -1.0]), 0.0, np.array([0.25, 0.0]), np.array([2.0]))
        assert v_a[0, 0] == pytest.approx(0.9898373248074183, rel=1e-14)
        assert v_v[0, 0] == pytest.approx(-0.24491866240370913, rel=1e-14)

    def test_non_finite_reports_layer(self):
        config = _tiny()
        params = _random_params(config)
        params.tensor("trunk.0.W")[0, 0] = np.nan
        x, t, phi_a, phi_v = _inputs(config)
        with pytest.raises(NumericError) as info:
            forward(params, x, t, phi_a, phi_v)
        assert info.value.layer == "trunk.0"


class TestBackward:
    """Hand-written backpropagation."""

    @pytest.mark.parametrize(
        "overrides",
        [{}, {"activation": "gelu-approx"}, {"heads": "linear"}, {"use_audio_condition": False}],
    )
    def test_matches_finite_differences(self, overrides):
        config = _tiny(**overrides)
        params = _random_params(config)
        x, t, phi_a, phi_v = _inputs(config)
        rng = np.random.default_rng(7)
        target_a = rng.standard_normal((3, config.d_a))
        target_v = rng.standard_normal((3, config.d_v_total))
        v_a, v_v = forward(params, x, t, phi_a, phi_v)
        grad = backward(params, x, t, phi_a, phi_v, v_a - target_a, v_v - target_v, 3.0)
        h = 1e-5
        for k in range(params.size):
            vec = params.vector.copy()
            vec[k] += h
            up = batch_loss(params.with_vector(vec), x, t, phi_a, phi_v, target_a, target_v, 3.0)
            vec[k] -= 2 * h
            down = batch_loss(params.with_vector(vec), x, t, phi_a, phi_v, target_a, target_v, 3.0)
            fd = (up - down) / (2 * h)
            assert abs(fd - grad[k]) <= 1e-4 * max(abs(fd), abs(grad[k]), 1e-4)

    def test_zero_residual_zero_gradient(self):
        config = _tiny()
        params = _random_params(config)
        x, t, phi_a, phi_v = _inputs(config)
        grad = backward(params, x, t, phi_a, phi_v, np.zeros((3, 3)), np.zeros((3, 4)), 3.0)
        assert np.all(grad == 0.0)

    def test_residual_shape_checked(self):
        config = _tiny()
        params = _random_params(config)
        with pytest.raises(LayoutError):
            backward(params, *_inputs(config), np.zeros((3, 2)), np.zeros((3, 4)), 1.0)

    def test_lambda_scales_video_term(self):
        config = _tiny()
        params = _random_params(config)
        x, t, phi_a, phi_v = _inputs(config)
        v_a, v_v = forward(params, x, t, phi_a, phi_v)
        zero_a = np.zeros_like(v_a)
        one = backward(params, x, t, phi_a, phi_v, zero_a, v_v, 1.0)
        three = backward(params, x, t, phi_a, phi_v, zero_a, v_v, 3.0)
        assert np.allclose(three, 3.0 * one, rtol=1e-10, atol=1e-12)


class TestCheckpoint:
    """Checkpoint files."""

    def test_roundtrip_bitwise(self, tmp_path):
        config = _tiny()
        params = _random_params(config)
        path = save_checkpoint(tmp_path / "model.ckpt", params)
        loaded = load_checkpoint(path)
        assert loaded.config == config
        inputs = _inputs(config)
        for a, b in zip(forward(params, *inputs), forward(loaded, *inputs)):
            assert np.array_equal(a, b)

    def test_sidecar_written(self, tmp_path):
        params = zero_params(_tiny())
        path = save_checkpoint(tmp_path / "model.ckpt", params)
        sidecar = json.loads((tmp_path / "model.ckpt.json").read_text())
        assert sidecar["param_count"] == params.size
        assert path.read_bytes()[:4] == CHECKPOINT_MAGIC

    def test_bad_magic(self, tmp_path):
        path = save_checkpoint(tmp_path / "model.ckpt", zero_params(_tiny()))
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = save_checkpoint(tmp_path / "model.ckpt", zero_params(_tiny()))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_missing_sidecar(self, tmp_path):
        path = save_checkpoint(tmp_path / "model.ckpt", zero_params(_tiny()))
        (tmp_path / "model.ckpt.json").unlink()
        with pytest.raises(FormatError):
            load_checkpoint(path)
