import numpy as np
import pytest

from ergodens.barrier import make_nested_root_barrier, make_power_exp_barrier
from ergodens.model import build_affine, build_stochvol_cascade


@pytest.fixture
def cir211():
    return build_affine(1, [2.0], mu_diag=[1.0], sigma_diag=[1.0])


@pytest.fixture
def cir111():
    return build_affine(1, [1.0], mu_diag=[1.0], sigma_diag=[1.0])


@pytest.fixture
def cascade():
    return build_stochvol_cascade(2, [2.0, 1.0], [[0.0, 0.0], [1.0, 0.0]], [1.0, 1.0], [1.0, 1.0])


@pytest.fixture
def flagship_barrier():
    return make_power_exp_barrier(1, 0.5, 0.5)


@pytest.fixture
def cascade_barrier():
    return make_nested_root_barrier(2, [0.5375, 0.05], [0.95625, 0.95625])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one summary line per acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
