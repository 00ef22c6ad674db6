import numpy as np
import pytest

from dopplersync import codec, kernels

BACKENDS = ["python"] + (["compiled"] if kernels.HAVE_COMPILED else [])

# H = [1101; 0111]
TOY_H = np.array([[1, 1, 0, 1], [0, 1, 1, 1]], dtype=np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def full_code():
    return codec.load_code()


@pytest.fixture
def toy_code():
    return codec.ParityCheckMatrix.from_dense(TOY_H)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
