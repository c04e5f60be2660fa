import numpy as np
import pytest

from rotmaster import build_coupling, coherent_state, kerr_field


@pytest.fixture(scope="session")
def kerr():
    return build_coupling(12, kerr_field())


@pytest.fixture(scope="session")
def kerr_unitary():
    return build_coupling(12, kerr_field(0.1, 0.0))


@pytest.fixture(scope="session")
def psi_y(kerr):
    return coherent_state(kerr.ground, 2, np.pi / 2, np.pi / 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng, n):
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
