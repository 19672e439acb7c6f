# ==============================================================================
# FIXTURES PARTAGÉES
# ==============================================================================

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from engine.geometry import save_cloud, synth_cloud
from models.schemas import PointCloud

settings.register_profile("maskforge", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("maskforge")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def sphere() -> PointCloud:
    return synth_cloud(512, seed=3)


@pytest.fixture
def cloud_file(tmp_path, sphere):
    path = tmp_path / "cloud.xyz"
    save_cloud(sphere, path)
    return path


def random_cloud(rng: np.random.Generator, n: int) -> PointCloud:
    return PointCloud(points=rng.standard_normal((n, 3)))
