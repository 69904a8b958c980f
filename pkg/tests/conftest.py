import pytest
import torch

from mbnet.model import ModelConfig
from mbnet.synthetic import make_fixture

# spec of the small model used across the suite
TINY = dict(
    base_width=8,
    stage_channels=(8, 16, 32, 64, 128),
    stage_blocks=(1, 1, 1, 1),
    mid_channels=16,
    growth=8,
)

# even smaller: fits the <= 50k parameter budget of the finite-difference checks
GRADCHECK = dict(
    base_width=4,
    stage_channels=(4, 8, 12, 16, 20),
    stage_blocks=(1, 1, 1, 1),
    mid_channels=6,
    growth=3,
    up_channels=(6, 4, 4),
)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY)


@pytest.fixture
def gradcheck_config():
    return ModelConfig(**GRADCHECK)


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    return make_fixture(tmp_path_factory.mktemp("relight_fixture"), size=(64, 64))


@pytest.fixture(scope="session")
def fixture_root_128(tmp_path_factory):
    return make_fixture(tmp_path_factory.mktemp("relight_fixture_128"), size=(128, 128))
