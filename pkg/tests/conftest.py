import warnings

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore", DeprecationWarning)
    from fastapi.testclient import TestClient

from xaas.gateway import create_app
from xaas.refmodel import VISION_MODEL, builtin_model
from xaas.store import ArtifactStore
from xaas.synth import synthetic_image_dataset, synthetic_tabular_dataset


@pytest.fixture
def store(tmp_path):
    return ArtifactStore(tmp_path / "store")


@pytest.fixture
def all_client(store):
    return TestClient(create_app("all", store))


@pytest.fixture(scope="session")
def vision_model():
    return builtin_model(VISION_MODEL)


@pytest.fixture(scope="session")
def small_images(vision_model):
    return synthetic_image_dataset(vision_model, n=8, dataset_id="small-images")


@pytest.fixture(scope="session")
def bench_images(vision_model):
    """The full 64-image benchmark used by the heavier checks."""
    return synthetic_image_dataset(vision_model)


@pytest.fixture(scope="session")
def small_tabular():
    from xaas.refmodel import TABULAR_MODEL

    return synthetic_tabular_dataset(builtin_model(TABULAR_MODEL), n=24,
                                     dataset_id="small-tabular")
