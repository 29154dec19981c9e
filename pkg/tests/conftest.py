import numpy as np
import pytest

from anomseg.datagen import SceneSpec, generate_dataset


@pytest.fixture(scope="session")
def small_spec():
    return SceneSpec(height=32, width=32, num_background_classes=3, rng_seed=0)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return generate_dataset(small_spec, 16, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for ac in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[ac])
