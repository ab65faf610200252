import numpy as np
import pytest
from hypothesis import settings

from kvhybrid.hybrid import HybridHamiltonian
from kvhybrid.matfield import pauli_expand
from kvhybrid.phasespace import PhaseSpaceGrid, Polynomial

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


def band_limited(grid, rng, modes=3, terms=6):
    """Random smooth periodic field built from a few low Fourier modes."""
    f = np.zeros(grid.shape)
    for _ in range(terms):
        a, b = rng.integers(-modes, modes + 1, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        f += rng.normal() * np.cos(2 * np.pi * (a * (grid.Q - grid.q_min) / grid.Lq
                                                 + b * (grid.P - grid.p_min) / grid.Lp) + phase)
    return f / terms


def gaussian(grid, center=(1.0, 0.0), width=0.75):
    D = np.exp(-((grid.Q - center[0]) ** 2 + (grid.P - center[1]) ** 2) / (2 * width**2))
    return D / grid.integrate(D)


def random_pure_state(grid, rng, width=1.0):
    """Gaussian density with a smooth random Bloch direction, as a 2x2 matrix field."""
    center = rng.uniform(-1.0, 1.0, size=2)
    D = gaussian(grid, center, width)
    n = np.stack([band_limited(grid, rng, 1) + rng.normal() for _ in range(3)])
    n /= np.sqrt(np.sum(n * n, axis=0))
    return pauli_expand(0.5 * D, 0.5 * D * n)


def random_bulk_state(grid, rng, mixedness=0.6):
    """Strictly positive periodic density with a random (generally mixed) spin part."""
    D = 1.0 + 0.3 * band_limited(grid, rng)
    s = mixedness * np.stack([band_limited(grid, rng) for _ in range(3)])
    return pauli_expand(0.5 * D, 0.5 * s)


def random_mixed_state(grid, rng, width=1.0):
    """Gaussian density whose conditional state has a smoothly varying Bloch length in (0.1, 0.9)."""
    D = gaussian(grid, rng.uniform(-1.0, 1.0, size=2), width)
    n = np.stack([band_limited(grid, rng, 1) + rng.normal() for _ in range(3)])
    n /= np.sqrt(np.sum(n * n, axis=0))
    length = 0.5 + 0.4 * np.tanh(band_limited(grid, rng, 1))
    return pauli_expand(0.5 * D, 0.5 * D * length * n)


def random_hermitian_field(grid, rng):
    return pauli_expand(band_limited(grid, rng), np.stack([band_limited(grid, rng) for _ in range(3)]))


def spin_boson_hamiltonian(grid, lam=0.5, omega_s=1.0, hbar=1.0):
    H0 = Polynomial({(2, 0): 0.5, (0, 2): 0.5})
    field = [Polynomial({(1, 0): lam}), Polynomial(), Polynomial({(0, 0): omega_s})]
    return HybridHamiltonian.from_pauli(grid, H0, field, hbar)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid64():
    return PhaseSpaceGrid(64, 64)


@pytest.fixture(scope="session")
def grid48():
    return PhaseSpaceGrid(48, 48)


# -- acceptance verdicts ------------------------------------------------------------

_VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record and print one ``PASS``/``FAIL`` line; the summary repeats them after the run."""

    def emit(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}: {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
