import dataclasses
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import config
from core.errors import ConfigError
from harness.experiment_config import (ExperimentConfig, LearningRateDrop, config_from_dict, parse_config,
                                       serialize_config, write_config)

MINIMAL = {"dataset": {"kind": "synth"}, "mode": "fedin"}


def write_json(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def test_minimal_config_fills_defaults(tmp_path):
    cfg = parse_config(write_json(tmp_path, MINIMAL))
    assert cfg.lam == 2.0
    assert cfg.sample_size == 512
    assert cfg.store_capacity == config.DEFAULT_STORE_CAPACITY
    assert cfg.num_rounds == config.DEFAULT_NUM_ROUNDS
    assert cfg.partition.num_clients == 10
    assert [cfg.variant_assignment[k] for k in range(10)] == list(config.DEFAULT_VARIANT_ASSIGNMENT)
    assert cfg.resolver == "simplified"


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigError) as excinfo:
        parse_config(write_json(tmp_path, {**MINIMAL, "foo": 1}))
    assert "foo" in str(excinfo.value)


def test_unknown_nested_key_has_a_dotted_path():
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict({**MINIMAL, "partition": {"bar": 2}})
    assert excinfo.value.key_path == "partition.bar"


def test_missing_required_keys():
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict({"dataset": {}})
    assert excinfo.value.key_path == "mode"
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict({"mode": "fedin"})
    assert excinfo.value.key_path == "dataset"


@pytest.mark.parametrize("key,value", [
    ("num_rounds", "ten"),
    ("num_rounds", 2.5),
    ("num_rounds", True),
    ("lambda", "two"),
    ("exclude_self", 1),
])
def test_type_errors_name_the_key(key, value):
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict({**MINIMAL, key: value})
    assert excinfo.value.key_path == key


@pytest.mark.parametrize("key,value", [
    ("num_rounds", 0),
    ("batch_size", 0),
    ("mode", "fedprox"),
    ("lambda", -1.0),
    ("resolver", "pcgrad"),
    ("eval_mode", "train"),
])
def test_range_errors_name_the_key(key, value):
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict({**MINIMAL, key: value})
    assert excinfo.value.key_path == key


def test_lambda_is_spelled_out_in_json():
    assert config_from_dict({**MINIMAL, "lambda": 0.5}).lam == 0.5
    with pytest.raises(ConfigError):
        config_from_dict({**MINIMAL, "lam": 0.5})


def test_variant_assignment_must_cover_every_client():
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict({**MINIMAL, "partition": {"num_clients": 3}, "variant_assignment": {"0": "A", "1": "B"}})
    assert excinfo.value.key_path == "variant_assignment"
    with pytest.raises(ConfigError):
        config_from_dict({**MINIMAL, "partition": {"num_clients": 1}, "variant_assignment": {"0": "Z"}})
    with pytest.raises(ConfigError):
        config_from_dict({**MINIMAL, "variant_assignment": {"first": "A"}})


def test_idx_datasets_need_paths():
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict({"mode": "fedin", "dataset": {"kind": "idx", "train_images": "a"}})
    assert excinfo.value.key_path == "dataset.train_labels"


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"mode\": ")
    with pytest.raises(ConfigError):
        parse_config(path)
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.json")


def test_round_trip_through_a_file(tmp_path):
    cfg = config_from_dict({
        **MINIMAL,
        "partition": {"kind": "iid", "num_clients": 3, "seed": 5},
        "variant_assignment": {"0": "E", "1": "D", "2": "B"},
        "lr_drop": {"round": 30, "learning_rate": 0.0001},
        "model": {"kind": "mlp", "dtype": "float64"},
        "lambda": 1,
    })
    assert parse_config(write_config(cfg, tmp_path / "cfg.json")) == cfg
    assert config_from_dict(serialize_config(cfg)) == cfg


@settings(max_examples=40, deadline=None)
@given(mode=st.sampled_from(config.RUN_MODES),
       num_clients=st.integers(1, 12),
       alpha=st.floats(0.01, 50.0, allow_nan=False),
       lam=st.floats(0.0, 10.0, allow_nan=False),
       seed=st.integers(0, 2 ** 31 - 1),
       rounds=st.integers(1, 500))
def test_serialize_is_inverse_of_parse(mode, num_clients, alpha, lam, seed, rounds):
    cfg = config_from_dict({"mode": mode, "dataset": {}, "partition": {"num_clients": num_clients, "alpha": alpha},
                            "lambda": lam, "seed": seed, "num_rounds": rounds})
    assert config_from_dict(json.loads(json.dumps(serialize_config(cfg)))) == cfg


def test_helpers():
    cfg = config_from_dict({**MINIMAL, "seed": 9, "lr_drop": {"round": 3, "learning_rate": 0.5}})
    assert cfg.partition_spec().seed == 9
    assert cfg.learning_rate_for(2) == config.DEFAULT_LEARNING_RATE
    assert cfg.learning_rate_for(3) == 0.5
    assert cfg.client_settings().lam == cfg.lam
    assert cfg.run_name == "fedin-seed9"
    assert len(cfg.config_hash()) == 64
    assert cfg.config_hash() != dataclasses.replace(cfg, seed=10).config_hash()
    assert cfg.lr_drop == LearningRateDrop(3, 0.5)


def test_replace_revalidates():
    cfg = config_from_dict(MINIMAL)
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, num_rounds=0)
    assert isinstance(dataclasses.replace(cfg, mode=config.MODE_NO_IN), ExperimentConfig)
