import numpy as np
import pytest

from fedcl import _backend, curriculum, gmm

BACKENDS = ["python"] + (["cython"] if _backend.compiled_kernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    mod = _backend.python_kernels if request.param == "python" else _backend.compiled_kernels
    monkeypatch.setattr(curriculum, "kernels", mod)
    monkeypatch.setattr(gmm, "kernels", mod)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
