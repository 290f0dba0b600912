import numpy as np
import pytest

from maa.config import config_from_dict
from maa.data import DatasetSpec, generate_dataset
from maa.models.encoders import build_model


@pytest.fixture(scope="session")
def tiny_handle(tmp_path_factory):
    """32-pair corpus for fast unit tests."""
    spec = DatasetSpec(num_pairs=32, seed=7, split_fractions=(0.5, 0.25, 0.25))
    return generate_dataset(spec, tmp_path_factory.mktemp("tiny_ds"))


@pytest.fixture(scope="session")
def full_cfg(tmp_path_factory):
    """The acceptance-run configuration: 256 pairs, default attack settings."""
    root = tmp_path_factory.mktemp("acceptance_run")
    return config_from_dict({
        "output_root": str(root),
        "seed": 0,
        "eval": {"attack_subset": 64, "trend_subset": 16, "seeds": [0, 1, 2]},
    })


@pytest.fixture(scope="session")
def full_handle(full_cfg):
    from maa import pipeline
    return pipeline.run_gen_data(full_cfg, log=lambda *_: None)


@pytest.fixture(scope="session")
def trained_models(full_cfg, full_handle):
    """Train source + target once per session; records wall time for AC5."""
    import time

    from maa import pipeline
    t0 = time.monotonic()
    models = pipeline.run_train(full_cfg, log=lambda *_: None)
    models["__train_seconds__"] = time.monotonic() - t0
    return models


@pytest.fixture(scope="session")
def rand_models(tiny_handle):
    """Untrained (randomly initialized) encoders for gradient/loss tests."""
    v = len(tiny_handle.vocab)
    return {
        "patch_transformer": build_model("patch_transformer", vocab_size=v, seed=11,
                                         name="rand_pt"),
        "residual_cnn": build_model("residual_cnn", vocab_size=v, seed=11,
                                    name="rand_cnn"),
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
