import numpy as np
import pytest
import torch

from synclay.data import load_dataset
from synclay.fixtures import make_fixture_dataset
from synclay.generator import ModelConfig


def pytest_configure(config):
    torch.manual_seed(0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_config():
    # small enough for finite differences, same topology as the full model
    return ModelConfig(embed_dim=8, image_size=64, base_channels=16)


@pytest.fixture(scope="session")
def tiny_records(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture_data")
    make_fixture_dataset(root, "train", n_records=8, n_cells=(2, 5), image_size=64, seed=0)
    return list(load_dataset(root, split="train"))
