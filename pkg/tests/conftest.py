import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from onhgdl.geometry import build_point_cloud  # noqa: E402
from onhgdl.synth import SynthConfig, generate_dataset  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_cfg():
    return SynthConfig(dims=(24, 48, 128), spacing_um=(160.0, 80.0, 11.7))


@pytest.fixture(scope="session")
def small_samples(small_cfg):
    return generate_dataset(small_cfg, 6, 1, seed=3)


@pytest.fixture(scope="session")
def small_clouds(small_samples):
    return [build_point_cloud(s.volume) for s in small_samples]


@pytest.fixture(scope="session")
def default_sample():
    return generate_dataset(SynthConfig(), 1, 1, seed=11)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance_log.TITLES):
        terminalreporter.write_line(acceptance_log.line(n))
