"""Walker state on the truncated momentum lattice and the 2x2 coin family.

The amplitudes of both internal levels are kept in one ``(2, N)`` complex
array: row 0 is level ``|1>``, row 1 is level ``|2>``, and column ``i``
is momentum class ``n = i - n_max``.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, TruncationError

__all__ = [
    "MomentumGrid",
    "SpinorState",
    "BlochAngles",
    "CoinMatrix",
    "CoinSymmetry",
    "coin_from_bloch",
    "named_coin",
    "make_ratchet_state",
    "apply_coin",
    "classify_coin_symmetry",
    "ratchet_block",
]

NORM_TOL = 1e-10
LEAKAGE_TOL = 1e-8
BALANCED_CHI = math.pi / 4


@dataclass(frozen=True)
class MomentumGrid:
    """Integer momentum classes ``-n_max..n_max``.

    ``edge_margin`` outermost classes on each side are watched for leakage.
    """

    n_max: int = 128
    edge_margin: int = 8

    def __post_init__(self) -> None:
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ConfigError("must be a positive integer", key="n_max")
        if int(self.edge_margin) != self.edge_margin or self.edge_margin < 1:
            raise ConfigError("must be a positive integer", key="edge_margin")
        if self.edge_margin >= self.n_max:
            raise ConfigError("must be smaller than n_max", key="edge_margin")

    @property
    def size(self) -> int:
        return 2 * self.n_max + 1

    @property
    def n(self) -> np.ndarray:
        return np.arange(-self.n_max, self.n_max + 1)

    def index(self, n: int) -> int:
        if abs(n) > self.n_max:
            raise IndexError(f"momentum class {n} outside grid of n_max={self.n_max}")
        return n + self.n_max

    def edge_probability(self, amps: np.ndarray) -> np.ndarray:
        """Population in the watched edge classes, for ``(..., 2, N)`` amplitudes."""
        m = self.edge_margin
        edges = np.concatenate([amps[..., :m], amps[..., -m:]], axis=-1)
        return (edges.real**2 + edges.imag**2).sum(axis=(-2, -1))


@dataclass(frozen=True, eq=False)
class SpinorState:
    """Two-level walker: amplitudes over the grid plus a quasimomentum.

    Instances are immutable; the amplitude array is flagged read-only.
    """

    amps: np.ndarray
    beta: float
    grid: MomentumGrid = field(default_factory=MomentumGrid)

    def __post_init__(self) -> None:
        amps = np.array(self.amps, dtype=np.complex128)
        if amps.shape != (2, self.grid.size):
            raise ValueError(f"amplitudes must have shape (2, {self.grid.size}), got {amps.shape}")
        amps.flags.writeable = False
        object.__setattr__(self, "amps", amps)
        beta = float(self.beta)
        if not 0.0 <= beta < 1.0:
            raise DomainError(f"quasimomentum beta={beta} outside [0, 1)")
        object.__setattr__(self, "beta", beta)

    @property
    def amps1(self) -> np.ndarray:
        return self.amps[0]

    @property
    def amps2(self) -> np.ndarray:
        return self.amps[1]

    def norm(self) -> float:
        return float((self.amps.real**2 + self.amps.imag**2).sum())

    def edge_probability(self) -> float:
        return float(self.grid.edge_probability(self.amps))

    def replace(self, amps: np.ndarray | None = None, beta: float | None = None) -> SpinorState:
        return SpinorState(
            self.amps if amps is None else amps,
            self.beta if beta is None else beta,
            self.grid,
        )

    def check(self) -> None:
        """Raise if the state is not normalized or has reached the grid edge."""
        norm = self.norm()
        if abs(norm - 1.0) > NORM_TOL:
            raise DomainError(f"state norm {norm!r} differs from 1")
        check_leakage(self.grid, self.amps)


def check_leakage(grid: MomentumGrid, amps: np.ndarray) -> None:
    edge = grid.edge_probability(amps)
    worst = float(np.max(edge))
    if worst >= LEAKAGE_TOL:
        raise TruncationError(
            f"edge population {worst:.3e} in the outer {grid.edge_margin} classes "
            f"of n_max={grid.n_max}; enlarge the grid"
        )


@dataclass(frozen=True)
class BlochAngles:
    """Coin angles in radians, stored unwrapped."""

    chi: float
    gamma: float
    alpha: float

    @classmethod
    def balanced(cls, gamma: float, alpha: float) -> BlochAngles:
        return cls(BALANCED_CHI, gamma, alpha)


@dataclass(frozen=True)
class CoinMatrix:
    m11: complex
    m12: complex
    m21: complex
    m22: complex

    @classmethod
    def from_array(cls, a) -> CoinMatrix:
        a = np.asarray(a, dtype=np.complex128)
        if a.shape != (2, 2):
            raise ValueError(f"coin must be 2x2, got shape {a.shape}")
        return cls(complex(a[0, 0]), complex(a[0, 1]), complex(a[1, 0]), complex(a[1, 1]))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.m11, self.m12], [self.m21, self.m22]], dtype=np.complex128)

    def is_unitary(self, tol: float = 1e-12) -> bool:
        m = self.matrix
        return bool(np.allclose(m.conj().T @ m, np.eye(2), rtol=0.0, atol=tol))

    def is_balanced(self, tol: float = 1e-12) -> bool:
        return abs(abs(self.m11) ** 2 - 0.5) <= tol and abs(abs(self.m12) ** 2 - 0.5) <= tol

    def scaled(self, phase: complex) -> CoinMatrix:
        return CoinMatrix(phase * self.m11, phase * self.m12, phase * self.m21, phase * self.m22)

    def to_dict(self) -> dict:
        return {
            name: [value.real, value.imag]
            for name, value in (("m11", self.m11), ("m12", self.m12), ("m21", self.m21), ("m22", self.m22))
        }

    @classmethod
    def from_dict(cls, d: dict) -> CoinMatrix:
        return cls(*(complex(*d[name]) for name in ("m11", "m12", "m21", "m22")))


def coin_from_bloch(angles: BlochAngles) -> CoinMatrix:
    """Coin ``[[e^{ia} cos x, e^{-ig} sin x], [-e^{ig} sin x, e^{-ia} cos x]]``."""
    c = math.cos(angles.chi)
    s = math.sin(angles.chi)
    if angles.chi == BALANCED_CHI:
        # cos and sin of pi/4 differ in the last bit; use the exact common value
        c = s = math.sqrt(0.5)
    return CoinMatrix(
        cmath.exp(1j * angles.alpha) * c,
        cmath.exp(-1j * angles.gamma) * s,
        -cmath.exp(1j * angles.gamma) * s,
        cmath.exp(-1j * angles.alpha) * c,
    )


_R = math.sqrt(0.5)
_NAMED = {
    "Y": CoinMatrix(_R, 1j * _R, 1j * _R, _R),
    "W": CoinMatrix(_R, _R, -_R, _R),
    "GH": CoinMatrix(_R, _R, _R, -_R),
}


def named_coin(name: str) -> CoinMatrix:
    """The initialization coin ``Y`` or one of the walk coins ``W``, ``GH``."""
    try:
        return _NAMED[name.upper()]
    except KeyError:
        raise ConfigError(f"unknown coin {name!r}; expected one of {sorted(_NAMED)}", key="coin") from None


def ratchet_block(J: int) -> np.ndarray:
    """Momentum classes occupied by the width-``J`` ratchet state."""
    if J % 2:
        return np.arange(-(J // 2), J // 2 + 1)
    return np.arange(-J // 2 + 1, J // 2 + 1)


def make_ratchet_state(J: int, grid: MomentumGrid | None = None) -> SpinorState:
    """``J`` adjacent classes with relative phase ``e^{i pi/2}``, all in ``|1>``."""
    grid = grid or MomentumGrid()
    if int(J) != J or J < 1:
        raise ConfigError("must be a positive integer", key="J")
    block = ratchet_block(int(J))
    if np.max(np.abs(block)) > grid.n_max - grid.edge_margin:
        raise ConfigError(f"J={J} does not fit inside the grid (n_max={grid.n_max})", key="J")
    amps = np.zeros((2, grid.size), dtype=np.complex128)
    # i**j is exact, unlike exp(1j*j*pi/2)
    phases = np.array([1j ** int(j % 4) for j in block])
    amps[0, block + grid.n_max] = phases / math.sqrt(J)
    return SpinorState(amps, 0.0, grid)


def coin_arrays(coin: CoinMatrix, amps: np.ndarray) -> np.ndarray:
    """Apply ``coin`` to the internal axis of ``(..., 2, N)`` amplitudes.

    Works element by element so one row of a batch gives bit-identical
    results to the same row evolved alone.
    """
    a1 = amps[..., 0, :]
    a2 = amps[..., 1, :]
    out = np.empty_like(amps)
    out[..., 0, :] = coin.m11 * a1 + coin.m12 * a2
    out[..., 1, :] = coin.m21 * a1 + coin.m22 * a2
    return out


def apply_coin(state: SpinorState, coin: CoinMatrix) -> SpinorState:
    return state.replace(amps=coin_arrays(coin, state.amps))


class CoinSymmetry(enum.Enum):
    SYMMETRIC_LINE = "SymmetricLine"
    ASYMMETRIC_LEFT = "AsymmetricLeft"
    ASYMMETRIC_RIGHT = "AsymmetricRight"
    GENERAL = "General"


def classify_coin_symmetry(angles: BlochAngles, tol: float = 1e-9) -> CoinSymmetry:
    """Classify a balanced coin by ``zeta = gamma - alpha``.

    ``zeta`` on 0 or pi gives the symmetric lines; ``0 < zeta < pi`` skews the
    walk to the left and ``pi < zeta < 2 pi`` to the right.
    """
    if abs(angles.chi - BALANCED_CHI) > tol:
        raise DomainError(f"coin symmetry classes need chi = pi/4, got chi={angles.chi}")
    zeta = math.fmod(angles.gamma - angles.alpha, 2 * math.pi)
    if zeta < 0:
        zeta += 2 * math.pi
    if min(zeta, abs(zeta - math.pi), 2 * math.pi - zeta) <= tol:
        return CoinSymmetry.SYMMETRIC_LINE
    if zeta < math.pi:
        return CoinSymmetry.ASYMMETRIC_LEFT
    return CoinSymmetry.ASYMMETRIC_RIGHT
