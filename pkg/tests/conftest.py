import warnings

import pytest

from gibbsdisc.bessel import build_basis


@pytest.fixture(scope="session")
def basis8():
    return build_basis(8, 64)


@pytest.fixture(scope="session")
def basis16():
    return build_basis(16, 64)


@pytest.fixture(scope="session")
def basis64():
    return build_basis(64)


@pytest.fixture(scope="session")
def basis256():
    return build_basis(256, 1024)


@pytest.fixture(scope="session")
def small_basis():
    """N = 4 on a generous grid, for finite-difference oracles."""
    return build_basis(4, 32)


@pytest.fixture(scope="session")
def flow_basis():
    """The N = 16, K = 2N grid used by the invariance experiments."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_basis(16, 32)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and echo it live."""

    def emit(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
