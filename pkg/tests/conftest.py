import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from strf.cli import setup

settings.register_profile("fast", max_examples=20, deadline=None)
settings.register_profile(
    "ci", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))

setup()


def pytest_collection_modifyitems(config, items):
    if os.environ.get("STRF_ACCEPTANCE") == "1":
        return
    skip = pytest.mark.skip(reason="set STRF_ACCEPTANCE=1 to run the desk-scale experiment")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """
    Twelve 16×16 velocity-family sequences of 14 frames.
    """
    from strf.event_simulator import DatasetSpec, make_dataset

    out = tmp_path_factory.mktemp("data")
    spec = DatasetSpec.desk("velocity", resolution=16, n_sequences=12, n_frames=14, supersample=2, seed=3)
    make_dataset(spec, str(out))
    return str(out)
