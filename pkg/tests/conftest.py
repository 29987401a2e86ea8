import numpy as np
import pytest

from cil_toolkit.core.model import MLP, BackboneSpec
from cil_toolkit.data.splits import LABEL_ORDER, SplitSpec, parse_schedule, stratified_split
from cil_toolkit.data.synth import synth_blobs
from cil_toolkit.experiment.config import ExperimentConfigManager


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs over several seeds")


@pytest.fixture(autouse=True)
def fresh_config_cache():
    ExperimentConfigManager().reset()
    yield
    ExperimentConfigManager().reset()


@pytest.fixture
def blobs():
    """Six well separated classes in 8 dimensions, 40 samples each."""
    return synth_blobs(
        num_classes=6, n_per_class=40, dim=8, separation=6.0, noise_sigma=0.5, seed=0
    )


@pytest.fixture
def splits(blobs):
    return stratified_split(blobs, SplitSpec(), seed=0)


@pytest.fixture
def schedule():
    return parse_schedule("2-2-2", 6, seed=0, order=LABEL_ORDER)


@pytest.fixture
def mlp_spec():
    return BackboneSpec(kind=MLP, input_shape=(8,), embedding_dim=8, hidden_sizes=[16, 8])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """A complete experiment document small enough to train in a second."""
    return {
        "data": {
            "synth": {
                "num_classes": 6,
                "n_per_class": 30,
                "dim": 8,
                "separation": 6.0,
                "noise_sigma": 0.5,
                "seed": 0,
            },
            "class_order": "label",
        },
        "schedule": "2-2-2",
        "backbone": {"kind": "mlp", "hidden_sizes": [16, 8]},
        "base_train": {
            "epochs_max": 4,
            "batch_size": 16,
            "lr_schedule": {"kind": "cosine", "lr0": 0.05},
            "early_stop_patience": 4,
        },
        "step": {
            "losses": {"ce_new": True, "ce_old": True},
            "phase1": {"lr": 0.05, "epochs": 1},
            "phase2": {"lr": 0.01, "epochs_max": 2, "patience": 1},
            "batch_size": 16,
        },
        "exemplars": {"capacity": 12, "strategy": "random"},
        "seeds": [0],
        "jobs": 1,
    }
