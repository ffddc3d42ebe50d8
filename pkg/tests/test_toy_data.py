"""Tests for toy_data: signatures, conditions, generation and dataset files."""

import json
from dataclasses import replace

import numpy as np
import pytest

from sbfm.errors import ConfigError, DimensionError, FormatError
from sbfm.toy_data import (
    DATASET_MAGIC,
    QUANTUM,
    DataConfig,
    ProjectorSpec,
    embed_signature,
    encode_condition,
    file_digest,
    generate_dataset,
    header_size,
    object_signature,
    read_dataset,
    record_size,
    temporal_project,
    write_dataset,
)


class TestDataConfig:
    """DataConfig defaults and validation."""

    def test_defaults(self):
        config = DataConfig()
        assert config.n_pairs == 4096
        assert config.n_objects == 8
        assert config.objects_per_scene == 2
        assert config.layout.d_a == 32
        assert config.layout.d_v_total == 128

    def test_single_object_rejected(self):
        with pytest.raises(ConfigError):
            DataConfig(objects_per_scene=1)

    def test_more_objects_than_vocabulary_rejected(self):
        with pytest.raises(ConfigError):
            DataConfig(n_objects=3, objects_per_scene=4)

    def test_code_too_short_rejected(self):
        with pytest.raises(ConfigError):
            DataConfig(n_objects=8, code_dim=4)


class TestTemporalProject:
    """Linear resampling onto the audio grid."""

    def test_identity(self):
        block = np.arange(8.0)
        assert temporal_project(block, ProjectorSpec(t_v=4, t_a=4)).tolist() == block.tolist()

    def test_constant_preserved(self):
        out = temporal_project(np.full(6, 2.5), ProjectorSpec(t_v=3, t_a=7))
        assert np.all(out == 2.5)
        assert out.size == 7 * 2

    def test_worked_resample(self):
        out = temporal_project(np.array([0.0, 3.0]), ProjectorSpec(t_v=2, t_a=4))
        assert out == pytest.approx([0.0, 1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            temporal_project(np.zeros(5), ProjectorSpec(t_v=2, t_a=4))

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            ProjectorSpec(t_v=2, t_a=4, mode="cubic")


class TestSignatures:
    """Object signatures and their embedding."""

    def test_deterministic(self):
        config = DataConfig()
        a = object_signature(5, 3, config)
        b = object_signature(5, 3, config)
        assert np.array_equal(a.audio_sig, b.audio_sig)
        assert np.array_equal(a.video_sig, b.video_sig)

    def test_mask_is_support(self):
        sig = object_signature(5, 1, DataConfig())
        assert np.array_equal(sig.support_mask == 1.0, np.abs(sig.video_sig) > 0)
        assert 0 < sig.support_mask.sum() < sig.support_mask.size

    def test_quantized(self):
        config = DataConfig()
        emb = embed_signature(object_signature(2, 0, config), config)
        assert np.array_equal(np.round(emb / QUANTUM) * QUANTUM, emb)


class TestEncodeCondition:
    """Condition embedding."""

    def test_empty_mask(self):
        cond = encode_condition(np.ones(8), np.zeros(8), 1, 4, 2)
        assert cond.phi_v.tolist() == [0.0, 0.0]

    def test_full_mask_constant(self):
        cond = encode_condition(np.full(8, 1.75), np.ones(8), 0, 4, 2)
        assert cond.phi_v.tolist() == [1.75, 1.75]

    def test_codes_orthonormal(self):
        a = encode_condition(np.ones(4), np.ones(4), 0, 4, 2).phi_a
        b = encode_condition(np.ones(4), np.ones(4), 2, 4, 2).phi_a
        assert a @ b == 0.0
        assert a @ a == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            encode_condition(np.ones(8), np.ones(6), 0, 4, 2)


class TestGenerateDataset:
    """Dataset generation."""

    def test_exact_removal(self, small_dataset, small_data_config):
        embeddings = np.stack(
            [embed_signature(object_signature(3, k, small_data_config), small_data_config)
             for k in range(small_data_config.n_objects)]
        )
        removed = embeddings[small_dataset.removed_id]
        assert np.array_equal(small_dataset.x0 - small_dataset.x1, removed)

    def test_two_objects_leave_one(self, small_dataset, small_data_config):
        embeddings = [
            embed_signature(object_signature(3, k, small_data_config), small_data_config)
            for k in range(small_data_config.n_objects)
        ]
        for x1 in small_dataset.x1:
            assert any(np.array_equal(x1, e) for e in embeddings)

    def test_code_names_removed_object(self, small_dataset):
        assert np.array_equal(np.argmax(small_dataset.phi_a, axis=1), small_dataset.removed_id)

    def test_threads_do_not_change_output(self, small_data_config):
        a = generate_dataset(3, small_data_config)
        b = generate_dataset(3, small_data_config, threads=3)
        assert np.array_equal(a.x0, b.x0)
        assert np.array_equal(a.removed_id, b.removed_id)

    def test_split_fractions(self):
        dataset = generate_dataset(1, DataConfig(n_pairs=200, t_a=4, t_v=2, c_v=1))
        train, val, test = dataset.split()
        assert (len(train), len(val), len(test)) == (180, 10, 10)
        assert np.array_equal(test.x0, dataset.x0[190:])

    def test_removal_balance(self):
        config = DataConfig(n_pairs=10000, t_a=4, t_v=2, c_v=1)
        counts = np.bincount(generate_dataset(9, config).removed_id, minlength=config.n_objects)
        p = 1.0 / config.n_objects
        se = np.sqrt(config.n_pairs * p * (1 - p))
        assert np.all(np.abs(counts - config.n_pairs * p) < 4 * se)


class TestDatasetFile:
    """Binary dataset format."""

    def test_roundtrip(self, tmp_path, small_dataset):
        path = tmp_path / "toy.sbds"
        manifest = write_dataset(small_dataset, path)
        loaded = read_dataset(path, expected_digest=manifest.digest)
        assert loaded.seed == small_dataset.seed
        assert loaded.config == small_dataset.config
        assert np.array_equal(loaded.x0, small_dataset.x0)
        assert np.array_equal(loaded.phi_v, small_dataset.phi_v)
        assert np.array_equal(loaded.removed_id, small_dataset.removed_id)

    def test_file_size(self, tmp_path, small_dataset, small_data_config):
        path = tmp_path / "toy.sbds"
        write_dataset(small_dataset, path)
        expected = header_size(3, small_data_config) + 40 * record_size(small_data_config)
        assert path.stat().st_size == expected
        assert path.read_bytes()[:4] == DATASET_MAGIC

    def test_record_size_default(self):
        # x0, x1 (160 f64 each), removed_id u32, phi_a 16 f64, phi_v 4 f64
        assert record_size(DataConfig()) == 8 * 160 * 2 + 4 + 8 * 16 + 8 * 4

    def test_same_seed_same_bytes(self, tmp_path, small_data_config):
        a = write_dataset(generate_dataset(3, small_data_config), tmp_path / "a.sbds")
        b = write_dataset(generate_dataset(3, small_data_config), tmp_path / "b.sbds")
        assert a.digest == b.digest
        assert (tmp_path / "a.sbds").read_bytes() == (tmp_path / "b.sbds").read_bytes()

    def test_digest_tracks_config(self, tmp_path, small_data_config):
        a = write_dataset(generate_dataset(3, small_data_config), tmp_path / "a.sbds")
        other = replace(small_data_config, n_pairs=41)
        b = write_dataset(generate_dataset(3, other), tmp_path / "b.sbds")
        assert a.digest != b.digest

    def test_sidecar(self, tmp_path, small_dataset):
        path = tmp_path / "toy.sbds"
        manifest = write_dataset(small_dataset, path)
        sidecar = json.loads((tmp_path / "toy.sbds.json").read_text())
        assert sidecar["digest"] == manifest.digest == file_digest(path)
        assert sidecar["n_pairs"] == 40

    def test_bad_magic(self, tmp_path, small_dataset):
        path = tmp_path / "toy.sbds"
        write_dataset(small_dataset, path)
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(FormatError):
            read_dataset(path)

    def test_truncated(self, tmp_path, small_dataset):
        path = tmp_path / "toy.sbds"
        write_dataset(small_dataset, path)
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(FormatError):
            read_dataset(path)

    def test_digest_mismatch(self, tmp_path, small_dataset):
        path = tmp_path / "toy.sbds"
        write_dataset(small_dataset, path)
        with pytest.raises(FormatError):
            read_dataset(path, expected_digest="0" * 64)
