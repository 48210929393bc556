import numpy as np
import pytest
from hypothesis import settings

from hubrank.meta_dataset import generate_synthetic_world
from hubrank.model_encoder import hub_features

settings.register_profile("hubrank", max_examples=60, deadline=None)
settings.load_profile("hubrank")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_world():
    """Four short datasets, two horizons; cheap enough for unit tests."""
    return generate_synthetic_world(0, n_datasets=4, K=8, horizons=(96, 192), length=2000)


@pytest.fixture(scope="session")
def small_hub(small_world):
    return hub_features([m.to_card() for m in small_world.hub])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
