"""Shared fixtures: a tiny dataset and a field sized to match it."""

import pytest

from sbfm.field_model import FieldConfig
from sbfm.toy_data import DataConfig, generate_dataset


@pytest.fixture
def small_data_config():
    return DataConfig(
        n_pairs=40, n_objects=4, objects_per_scene=2, t_a=8, c_a=1, t_v=4, c_v=2, code_dim=4
    )


@pytest.fixture
def small_dataset(small_data_config):
    return generate_dataset(3, small_data_config)


@pytest.fixture
def small_field_config(small_data_config):
    layout = small_data_config.layout
    return FieldConfig(
        d_a=layout.d_a,
        d_v_total=layout.d_v_total,
        trunk_width=16,
        trunk_depth=2,
        head_width=8,
        head_depth=1,
        cond_dim=small_data_config.c_v,
        time_embed_dim=small_data_config.code_dim,
    )
