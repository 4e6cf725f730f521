import pytest

from mmcloop.config import default_params
from mmcloop.steady_state import solve_steady_state


@pytest.fixture(scope="session")
def ccsc():
    p = default_params()
    return p, solve_steady_state(p)


@pytest.fixture(scope="session")
def fccc():
    p = default_params(ccc_mode="fccc")
    return p, solve_steady_state(p)


ACCEPTANCE = []


def record(number: int, title: str, passed: bool, detail: str):
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
