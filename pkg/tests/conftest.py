import numpy as np
import pytest

# criterion number -> (verdict, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> bool:
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE[number] = line
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_density(d, rng, rank=None):
    rank = d if rank is None else rank
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real
