import numpy as np
import pytest

from fermion_unravel.grid import make_grid
from fermion_unravel.operators import eigenstates, harmonic


@pytest.fixture(scope="session")
def grid128():
    return make_grid(16.0, 128)


@pytest.fixture(scope="session")
def grid64():
    return make_grid(16.0, 64)


@pytest.fixture(scope="session")
def ho_basis(grid128):
    return eigenstates(harmonic(), grid128, 12)


@pytest.fixture(scope="session")
def ho_basis64(grid64):
    return eigenstates(harmonic(), grid64, 16)


def random_smooth(grid, rng, n=1, width=0.8):
    """Random band-limited orbitals localized near the origin."""
    x = grid.x
    out = []
    for _ in range(n):
        x0 = rng.uniform(-1.5, 1.5)
        k0 = rng.uniform(-2, 2)
        env = np.exp(-((x - x0) ** 2) / (2 * width**2))
        poly = sum(rng.normal() * (x - x0) ** p for p in range(3)) + 1j * rng.normal()
        out.append(env * poly * np.exp(1j * k0 * x))
    return np.array(out)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
