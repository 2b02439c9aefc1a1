import numpy as np
import pytest

from adalag.models import benchmark_lgssm_params, make_lgssm, simulate

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_acceptance():
    def record(label, passed: bool, detail: str) -> None:
        line = f"criterion {str(label):>3}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bench_params():
    return benchmark_lgssm_params()


@pytest.fixture(scope="session")
def bench_data(bench_params):
    """201 observations from the scalar benchmark LGSSM."""
    return simulate(make_lgssm(bench_params), 200, seed=2024)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
