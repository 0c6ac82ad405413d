import pytest

from bilag import models


@pytest.fixture(scope="session")
def canonical():
    return models.canonical_r2()


@pytest.fixture(scope="session")
def curved():
    return models.curved_r2()


@pytest.fixture(scope="session")
def curved_adapted():
    return models.curved_r2_adapted()


@pytest.fixture(scope="session")
def four_d():
    return models.four_d()


@pytest.fixture(scope="session")
def cherry_default():
    from bilag.cherry import make_cherry_field

    return make_cherry_field()


@pytest.fixture(scope="session")
def cherry_map(cherry_default):
    from bilag.cherry import first_return_map

    return first_return_map(cherry_default, 512)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the lines are printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str, seconds: float):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}  ({seconds:.1f} s)"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
