import dataclasses

import pytest
import yaml

from maa.config import (ConfigError, config_from_dict, parse_config,
                        serialize_config)


def test_defaults():
    cfg = config_from_dict({})
    assert cfg.seed == 0
    assert cfg.dataset.num_pairs == 256
    assert cfg.dataset.split_fractions == (0.625, 0.125, 0.25)
    assert cfg.models["source"]["arch"] == "patch_transformer"
    assert cfg.models["target"]["arch"] == "residual_cnn"
    assert cfg.attack.iterations == 40
    assert cfg.eval.recall_ks == [1, 5, 10]


def test_seed_propagates_to_sections():
    cfg = config_from_dict({"seed": 9})
    assert cfg.dataset.seed == 9 and cfg.train.seed == 9 and cfg.attack.seed == 9
    cfg = config_from_dict({"seed": 9, "attack": {"seed": 2}})
    assert cfg.attack.seed == 2 and cfg.dataset.seed == 9


def test_unknown_keys_rejected_with_location():
    with pytest.raises(ConfigError, match="attack.sigma"):
        config_from_dict({"attack": {"sigma": 1}})
    with pytest.raises(ConfigError, match="typo"):
        config_from_dict({"typo": 1})
    with pytest.raises(ConfigError, match="models.source.depth"):
        config_from_dict({"models": {"source": {"arch": "patch_transformer",
                                                "depth": 9}}})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError, match="dataset"):
        config_from_dict({"dataset": {"num_pairs": 2}})
    with pytest.raises(ConfigError, match="attack"):
        config_from_dict({"attack": {"iterations": 0}})
    with pytest.raises(ConfigError, match="eval.split"):
        config_from_dict({"eval": {"split": "dev"}})
    with pytest.raises(ConfigError, match="arch"):
        config_from_dict({"models": {"source": {"arch": "resnet50"}}})


def test_yaml_roundtrip(tmp_path):
    cfg = config_from_dict({"seed": 4,
                            "attack": {"iterations": 7, "rescale_period": 3},
                            "output_root": str(tmp_path / "runs")})
    path = tmp_path / "cfg.yaml"
    serialize_config(cfg, path)
    cfg2 = parse_config(path)
    assert cfg2.seed == cfg.seed
    assert cfg2.attack == cfg.attack
    assert cfg2.dataset == cfg.dataset
    assert cfg2.train == cfg.train
    assert cfg2.eval == cfg.eval
    assert cfg2.output_root == cfg.output_root


def test_missing_file_and_bad_root(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError, match="mapping"):
        parse_config(bad)


def test_output_root_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("MAA_OUTPUT_ROOT", str(tmp_path / "env_runs"))
    cfg = config_from_dict({"output_root": "ignored"})
    assert cfg.output_root == tmp_path / "env_runs"


def test_per_model_train_overrides():
    cfg = config_from_dict({"models": {"source": {
        "arch": "patch_transformer", "train": {"epochs": 3}}}})
    assert cfg.models["source"]["train"]["epochs"] == 3
    with pytest.raises(ConfigError, match="models.source.train"):
        config_from_dict({"models": {"source": {
            "arch": "patch_transformer", "train": {"nope": 3}}}})


def test_config_to_dict_is_yaml_safe(tmp_path):
    cfg = config_from_dict({})
    yaml.safe_dump(cfg.to_dict())  # must not raise on any field type
