import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / 'src'))

from growthlab.config import ConfigManager, use_settings  # noqa: E402
from growthlab.grid_core import GridSpec, make_disk  # noqa: E402

SCENARIOS = ROOT / 'scenarios'


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: growth runs and fine-grid checks (deselect with -m 'not slow')")


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Built-in defaults for every test; CLI tests install their own."""
    monkeypatch.delenv('GROWTHLAB_CONFIG', raising=False)
    monkeypatch.delenv('GROWTHLAB_LOG_DIR', raising=False)
    config = ConfigManager()
    use_settings(config)
    return config


@pytest.fixture(scope='session')
def spec():
    """129 x 129 nodes on [-2, 2]^2, so h = 1/32 and the origin is a node."""
    return GridSpec.square(129, 2.0)


@pytest.fixture(scope='session')
def unit_disk(spec):
    return make_disk(0j, 1.0, spec)


@pytest.fixture(scope='session')
def fine_spec():
    """129 x 129 nodes on [-1, 1]^2 for disks of radius 1/2."""
    return GridSpec.square(129, 1.0)


@pytest.fixture(scope='session')
def half_disk(fine_spec):
    return make_disk(0j, 0.5, fine_spec)
