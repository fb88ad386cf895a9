import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("repo")

ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def synth10(tmp_path_factory):
    from hardnet_cws.data import synth_dataset
    return synth_dataset(10, 64, 7, tmp_path_factory.mktemp("synth10"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, name = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status} - {name}")
