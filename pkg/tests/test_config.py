import pytest

from segbench.config import ExperimentConfig, config_from_mapping, dump_config, load_config
from segbench.errors import ConfigError


def test_default_hyperparameters():
    c = ExperimentConfig()
    assert (c.resolution, c.backbone_scale, c.layer_picks, c.epochs) == (224, "base", (3, 6, 9, 12), 100)
    assert (c.lr, c.weight_decay, c.batch_size) == (1e-4, 1e-3, 128)
    assert (c.lambda_bce, c.lambda_dice) == (0.3, 0.7)
    assert c.split_ratios == (0.7, 0.15, 0.15)
    assert c.starvation_fractions == (1.0, 0.75, 0.5, 0.25)


def test_yaml_round_trip(tmp_path):
    c = ExperimentConfig.toy(seed=4, epochs=7)
    (tmp_path / "c.yaml").write_text(dump_config(c))
    back = load_config(tmp_path / "c.yaml")
    assert back == c and back.config_hash() == c.config_hash()


def test_hash_tracks_content():
    assert ExperimentConfig.toy().config_hash() != ExperimentConfig.toy(seed=1).config_hash()


@pytest.mark.parametrize("data", [
    {"epochs": 3},
    {"schema_version": 2},
    {"schema_version": 1, "learning_rate": 0.1},
    {"schema_version": 1, "preset": "huge"},
    {"schema_version": 1, "lambda_bce": 0.5},
    {"schema_version": 1, "backbone_scale": "giant"},
    {"schema_version": 1, "starvation_fractions": [0.5, 1.0]},
    {"schema_version": 1, "split_ratios": [0.5, 0.5, 0.5]},
])
def test_rejected_configs(data):
    with pytest.raises(ConfigError):
        config_from_mapping(data)


def test_toy_preset_from_mapping():
    c = config_from_mapping({"schema_version": 1, "preset": "toy", "epochs": 3})
    assert c == ExperimentConfig.toy(epochs=3)


def test_malformed_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text("schema_version: [1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml")
    (tmp_path / "d.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "d.yaml")
