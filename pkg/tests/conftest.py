"""
Configuration for pytest.
"""

import sys
import pytest
import logging
from pathlib import Path

# Add the project root to the Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from glvortex_lab.geometry import DomainSpec, build_grid


# Configure logging
@pytest.fixture(scope="session", autouse=True)
def configure_logging():
    """Configure logging for tests."""
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )

    # Create a logger for tests
    logger = logging.getLogger("glvortex_tests")
    logger.setLevel(logging.INFO)

    return logger


@pytest.fixture(scope="session")
def disk():
    return DomainSpec.disk()


@pytest.fixture(scope="session")
def ellipse():
    return DomainSpec.ellipse(1.2, 0.8)


@pytest.fixture(scope="session")
def disk_grid(disk):
    """Unit disk at 32 nodes per unit length, shared so cached operators are reused."""
    return build_grid(disk, 32)


@pytest.fixture(scope="session")
def coarse_disk_grid(disk):
    return build_grid(disk, 24)


@pytest.fixture(scope="session")
def ellipse_grid(ellipse):
    return build_grid(ellipse, 32)


@pytest.fixture
def cache_dir(tmp_path, monkeypatch):
    """Isolated GLVORTEX_CACHE_DIR."""
    path = tmp_path / "cache"
    monkeypatch.setenv("GLVORTEX_CACHE_DIR", str(path))
    return path
