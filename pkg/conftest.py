import numpy as np
import pytest

from refine3d.model.config import make_config
from refine3d.synthdata.dataset_service import gen_dataset, load_dataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow desk-scale training tests")
    parser.addoption(
        "--record-fixtures", action="store_true", default=False, help="rewrite the stored regression outputs in tests/fixtures"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# =============================================================================
# Shared fixtures
# =============================================================================

@pytest.fixture
def record_fixtures(request):
    return request.config.getoption("--record-fixtures")


@pytest.fixture
def rng():
    """Seeded generator for reproducible test data."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Smallest architecture that still has every component: 8px images, 8^3 voxels."""
    return make_config(
        name="tiny",
        input_size=8,
        encoder_channels=[4, 4],
        encoder_plain_blocks=(1,),
        latent_dim=16,
        heads=2,
        decoder_channels=[4, 4, 2],
        voxel_dim=8,
        refiner_channels=[2, 4],
    )


@pytest.fixture
def tiny_dataset(tmp_path):
    """10 samples x 3 views at 8^3 / 8px, generated on disk and loaded back."""
    root = tmp_path / "tiny_data"
    gen_dataset(10, 3, 8, 8, seed=5, out_root=root, threads=1)
    return load_dataset(root, threads=1)


@pytest.fixture(scope="session")
def desk_dataset_root(tmp_path_factory):
    """8 desk-size samples x 4 views, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("desk") / "data"
    gen_dataset(8, 4, 16, 32, seed=7, out_root=root, threads=1)
    return root
