import numpy as np
import pytest

from photocount.fockspace import DensityMatrix

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def random_density(dim: int, seed: int, rank: int | None = None) -> DensityMatrix:
    """Ginibre-sampled mixed state with full support over the Fock levels."""
    rng = np.random.default_rng(seed)
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho / np.trace(rho).real)


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion, printed at session end."""

    def record(name: str, passed: bool, detail: str) -> None:
        _ACCEPTANCE.append((name, passed, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
