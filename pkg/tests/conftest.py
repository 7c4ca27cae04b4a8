import sys

import hypothesis
import numpy as np
import pytest

from contrec.stream import SyntheticStreamConfig, generate_synthetic_stream

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")


SMALL = SyntheticStreamConfig(
    num_classes=6, num_categories=3, num_sessions=4, frames_per_sequence=5, feature_dim=4, seed=3
)


@pytest.fixture(scope="session")
def small_stream():
    return generate_synthetic_stream(SMALL)


@pytest.fixture(scope="session")
def default_stream():
    return generate_synthetic_stream(SyntheticStreamConfig())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
