"""Independent reference constructions used across the test modules."""

import numpy as np
import pytest
from scipy.linalg import expm


def dense_kick(n_max: int, strength: float) -> np.ndarray:
    """``exp(-i s cos(theta) sigma_z)`` as a dense matrix on the truncated lattice.

    ``cos(theta)`` shifts momentum by one unit either way with weight 1/2.
    Returned as a block-diagonal ``(2N, 2N)`` matrix, level 1 first.
    """
    size = 2 * n_max + 1
    cos = 0.5 * (np.eye(size, k=1) + np.eye(size, k=-1))
    k1 = expm(-1j * strength * cos)
    k2 = expm(1j * strength * cos)
    out = np.zeros((2 * size, 2 * size), dtype=complex)
    out[:size, :size] = k1
    out[size:, size:] = k2
    return out


def dense_drift(n_max: int, beta: float, duration: float) -> np.ndarray:
    n = np.arange(-n_max, n_max + 1)
    d = np.exp(-0.5j * duration * (n + beta) ** 2)
    return np.diag(np.concatenate([d, d]))


def dense_coin(n_max: int, m: np.ndarray) -> np.ndarray:
    return np.kron(m, np.eye(2 * n_max + 1))


def random_amps(rng, n_max: int, support: int | None = None) -> np.ndarray:
    """Normalized random ``(2, N)`` amplitudes, optionally limited to ``|n| <= support``."""
    size = 2 * n_max + 1
    a = rng.normal(size=(2, size)) + 1j * rng.normal(size=(2, size))
    if support is not None:
        n = np.arange(-n_max, n_max + 1)
        a[:, np.abs(n) > support] = 0
    return a / np.sqrt(np.sum(np.abs(a) ** 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
