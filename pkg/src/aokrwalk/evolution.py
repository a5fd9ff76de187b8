"""Floquet evolution of the kicked two-level walker.

One walk step is coin, finite-duration kick split into ``h`` sub-kicks
(each optionally followed by a spontaneous-emission event), then free
evolution for the rest of the Talbot period.

The array kernels (``kick_arrays``, ``drift_arrays``, ``project_arrays``)
act on ``(..., 2, N)`` amplitude stacks element by element along the
batch axes, so the ensemble engine can evolve many trajectories at once
and still reproduce a lone trajectory bit for bit.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigError, DomainError, SEProjectionError
from .qstate import (
    CoinMatrix,
    MomentumGrid,
    SpinorState,
    apply_coin,
    check_leakage,
    make_ratchet_state,
    named_coin,
)

__all__ = [
    "TALBOT",
    "KickParams",
    "SeParams",
    "Branch",
    "SeEvent",
    "EventLog",
    "WalkConfig",
    "free_evolution",
    "apply_subkick",
    "sample_se_event",
    "draw_kick_events",
    "apply_se_projection",
    "apply_kick",
    "walk_step",
    "run_walk",
    "se_rate_from_physical",
]

TALBOT = 4 * math.pi
EMPTY_BRANCH_TOL = 1e-12
# detuning-dependent projection weights (A, B) and (C, D), all approximated by 1/2
SE_WEIGHTS = {1: (0.5, 0.5), 2: (0.5, 0.5)}


@dataclass(frozen=True)
class KickParams:
    k: float = 1.45
    tau_p: float = 0.005
    h: int = 10
    talbot: float = TALBOT

    def __post_init__(self) -> None:
        if not self.k >= 0:
            raise ConfigError(f"kick strength must be >= 0, got {self.k}", key="k")
        if not self.tau_p > 0:
            raise ConfigError(f"pulse duration must be > 0, got {self.tau_p}", key="tau_p")
        if not self.tau_p < 0.1 * self.talbot:
            raise ConfigError(
                f"pulse duration {self.tau_p} must be much shorter than the Talbot time "
                f"(< {0.1 * self.talbot:.4g})",
                key="tau_p",
            )
        if int(self.h) != self.h or self.h < 1:
            raise ConfigError(f"sub-kick count must be a positive integer, got {self.h}", key="h")


@dataclass(frozen=True)
class SeParams:
    p_se: float = 0.0
    enabled: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_se <= 1.0:
            raise ConfigError(f"SE probability must lie in [0, 1], got {self.p_se}", key="p_se")

    def p_event(self, h: int) -> float:
        """Event probability per sub-kick."""
        return self.p_se / h if self.enabled else 0.0

    @property
    def active(self) -> bool:
        return self.enabled and self.p_se > 0.0


class Branch(enum.IntEnum):
    ONE = 1
    TWO = 2


@dataclass(frozen=True)
class SeEvent:
    step: int
    subkick: int
    branch: Branch
    delta_beta: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "subkick": self.subkick,
            "branch": int(self.branch),
            "delta_beta": self.delta_beta,
        }


class EventLog:
    """Event sink that keeps SE events in memory and writes JSON lines."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def __call__(self, event: SeEvent | dict, **extra) -> None:
        rec = event if isinstance(event, dict) else event.to_dict()
        self.records.append({**extra, **rec})

    def __len__(self) -> int:
        return len(self.records)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


EventSink = Callable[[SeEvent], None]


# ---------------------------------------------------------------------------
# array kernels


def angle_grid_size(n_max: int) -> int:
    """Smallest power of two >= 4 n_max."""
    return 1 << max(2, (4 * n_max - 1).bit_length())


@lru_cache(maxsize=64)
def _kick_phase(n_max: int, strength: float) -> np.ndarray:
    m = angle_grid_size(n_max)
    theta = 2 * np.pi * np.arange(m) / m
    phase = np.exp(-1j * strength * np.cos(theta))
    # sigma_z: |1> picks up exp(-i s cos), |2> the conjugate
    out = np.stack([phase, phase.conj()])
    out.flags.writeable = False
    return out


def kick_arrays(amps: np.ndarray, strength: float, n_max: int) -> np.ndarray:
    """Multiply by ``exp(-i strength cos(theta) sigma_z)`` on the angle grid."""
    m = angle_grid_size(n_max)
    buf = np.zeros(amps.shape[:-1] + (m,), dtype=np.complex128)
    buf[..., : n_max + 1] = amps[..., n_max:]
    buf[..., m - n_max :] = amps[..., :n_max]
    psi = np.fft.ifft(buf, axis=-1)
    psi *= _kick_phase(n_max, float(strength))
    back = np.fft.fft(psi, axis=-1)
    return np.concatenate([back[..., m - n_max :], back[..., : n_max + 1]], axis=-1)


def drift_phase(n: np.ndarray, beta, duration: float) -> np.ndarray:
    """``exp(-i (n + beta)^2 duration / 2)``; ``beta`` may be an array of rows.

    The phase is counted in turns of ``(n + beta)^2 duration / (4 pi)`` and
    reduced modulo 1 before exponentiating, so a full Talbot period at
    ``beta = 0`` is exactly the identity even for large ``|n|``.
    """
    p = n + np.asarray(beta, dtype=float)[..., None]
    turns = p * p * (duration / TALBOT)
    turns -= np.floor(turns)
    return np.exp(-2j * np.pi * turns)


def drift_arrays(amps: np.ndarray, n: np.ndarray, beta, duration: float) -> np.ndarray:
    return amps * drift_phase(n, beta, duration)[..., None, :]


def project_arrays(amps: np.ndarray, branch: Branch) -> tuple[np.ndarray, float]:
    """Coherent projection of a single ``(2, N)`` amplitude pair onto ``branch``."""
    w1, w2 = SE_WEIGHTS[int(branch)]
    phi = w1 * amps[0] + w2 * amps[1]
    norm = math.sqrt(float((phi.real**2 + phi.imag**2).sum()))
    out = np.zeros_like(amps)
    if norm >= EMPTY_BRANCH_TOL:
        out[int(branch) - 1] = phi / norm
    return out, norm


def project_with_resample(amps: np.ndarray, branch: Branch) -> np.ndarray:
    out, norm = project_arrays(amps, branch)
    if norm >= EMPTY_BRANCH_TOL:
        return out
    other = Branch.TWO if branch is Branch.ONE else Branch.ONE
    out, norm = project_arrays(amps, other)
    if norm >= EMPTY_BRANCH_TOL:
        return out
    raise SEProjectionError(
        f"both SE projection branches are empty (projected norm {norm:.3e})"
    )


def wrap_beta(beta: float) -> float:
    b = beta % 1.0
    # -1e-17 % 1.0 rounds up to exactly 1.0
    return 0.0 if b >= 1.0 else b


# ---------------------------------------------------------------------------
# state-level operations


def free_evolution(state: SpinorState, duration: float) -> SpinorState:
    return state.replace(amps=drift_arrays(state.amps, state.grid.n, state.beta, duration))


def apply_subkick(state: SpinorState, strength: float, drift: float) -> SpinorState:
    """One sub-kick of strength ``k/h`` followed by free drift ``tau_p/h``."""
    grid = state.grid
    amps = kick_arrays(state.amps, strength, grid.n_max) if strength else state.amps
    amps = drift_arrays(amps, grid.n, state.beta, drift)
    check_leakage(grid, amps)
    return state.replace(amps=amps)


def sample_se_event(rng: np.random.Generator, p_event: float, step: int = 0, subkick: int = 0) -> SeEvent | None:
    """Draw one sub-kick's SE outcome: ``None`` or an event with a random branch and shift."""
    if not 0.0 <= p_event <= 1.0:
        raise DomainError(f"event probability {p_event} outside [0, 1]")
    if rng.random() >= p_event:
        return None
    u_branch, u_shift = rng.random(2)
    return SeEvent(step, subkick, Branch.ONE if u_branch < 0.5 else Branch.TWO, u_shift - 0.5)


def draw_kick_events(rng: np.random.Generator, p_event: float, h: int, step: int = 0) -> list[SeEvent]:
    """All SE events of one pulse, in sub-kick order.

    The random stream is consumed as one block of ``h`` uniforms (event or
    not per sub-kick) followed by one ``(n_events, 2)`` block (branch,
    shift); nothing is drawn when ``p_event`` is zero. The draws do not
    depend on the wavefunction, which lets the ensemble engine schedule
    events ahead of the evolution.
    """
    if p_event <= 0.0:
        return []
    hits = np.flatnonzero(rng.random(h) < p_event)
    if hits.size == 0:
        return []
    extra = rng.random((hits.size, 2))
    return [
        SeEvent(step, int(j), Branch.ONE if u[0] < 0.5 else Branch.TWO, float(u[1]) - 0.5)
        for j, u in zip(hits, extra)
    ]


def apply_se_projection(state: SpinorState, event: SeEvent) -> SpinorState:
    """Project onto the event's internal level and shift the quasimomentum."""
    amps = project_with_resample(state.amps, event.branch)
    return state.replace(amps=amps, beta=wrap_beta(state.beta + event.delta_beta))


def apply_kick(
    state: SpinorState,
    kick: KickParams,
    se: SeParams,
    rng: np.random.Generator | None = None,
    log: EventSink | None = None,
    step: int = 0,
    events: Iterable[SeEvent] | None = None,
) -> SpinorState:
    """Finite pulse as ``h`` sub-kicks, each possibly followed by an SE event.

    ``events`` may be passed pre-drawn; otherwise they come from ``rng``
    via :func:`draw_kick_events`.
    """
    if events is None:
        if se.active:
            if rng is None:
                raise ValueError("a random stream is required when SE is enabled")
            events = draw_kick_events(rng, se.p_event(kick.h), kick.h, step)
        else:
            events = []
    by_subkick: dict[int, list[SeEvent]] = {}
    for ev in events:
        by_subkick.setdefault(ev.subkick, []).append(ev)
    strength = kick.k / kick.h
    drift = kick.tau_p / kick.h
    for j in range(kick.h):
        state = apply_subkick(state, strength, drift)
        for ev in by_subkick.get(j, ()):
            state = apply_se_projection(state, ev)
            if log is not None:
                log(ev)
    return state


def walk_step(
    state: SpinorState,
    coin: CoinMatrix,
    kick: KickParams,
    se: SeParams,
    rng: np.random.Generator | None = None,
    log: EventSink | None = None,
    step: int = 0,
) -> SpinorState:
    """Coin, pulse, then free evolution so the step lasts one Talbot period."""
    state = apply_coin(state, coin)
    state = apply_kick(state, kick, se, rng, log, step)
    return free_evolution(state, kick.talbot - kick.tau_p)


@dataclass(frozen=True)
class WalkConfig:
    """Complete description of one walk.

    ``init_kick`` selects whether the initialization coin is followed by a
    full pulse and Talbot period (the default) or acts alone before the
    first walk step.
    """

    coin: CoinMatrix = field(default_factory=lambda: named_coin("GH"))
    T: int = 15
    J: int = 3
    k: float = 1.45
    tau_p: float = 0.005
    h: int = 10
    p_se: float = 0.0
    se_enabled: bool = True
    beta0: float = 0.0
    n_max: int = 128
    edge_margin: int = 8
    init_coin: CoinMatrix = field(default_factory=lambda: named_coin("Y"))
    init_kick: bool = True
    talbot: float = TALBOT
    coin_label: str = "GH"

    def __post_init__(self) -> None:
        if int(self.T) != self.T or self.T < 0:
            raise ConfigError(f"step count must be a non-negative integer, got {self.T}", key="T")
        if int(self.J) != self.J or self.J < 1:
            raise ConfigError(f"initial width must be a positive integer, got {self.J}", key="J")
        if not 0.0 <= self.beta0 < 1.0:
            raise ConfigError(f"initial quasimomentum must lie in [0, 1), got {self.beta0}", key="beta0")
        for name in ("coin", "init_coin"):
            if not getattr(self, name).is_unitary():
                raise ConfigError("coin matrix is not unitary", key=name)
        # the parameter groups validate themselves on construction
        _ = (self.kick, self.se, self.grid)

    @property
    def kick(self) -> KickParams:
        return KickParams(self.k, self.tau_p, self.h, self.talbot)

    @property
    def se(self) -> SeParams:
        return SeParams(self.p_se, self.se_enabled)

    @property
    def grid(self) -> MomentumGrid:
        return MomentumGrid(self.n_max, self.edge_margin)

    def replace(self, **changes) -> WalkConfig:
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return WalkConfig(**values)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coin"] = self.coin.to_dict()
        d["init_coin"] = self.init_coin.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> WalkConfig:
        d = dict(d)
        d["coin"] = CoinMatrix.from_dict(d["coin"])
        d["init_coin"] = CoinMatrix.from_dict(d["init_coin"])
        return cls(**d)


def initial_state(config: WalkConfig) -> SpinorState:
    return make_ratchet_state(config.J, config.grid).replace(beta=config.beta0)


def run_walk(
    config: WalkConfig,
    rng: np.random.Generator | None = None,
    log: EventSink | None = None,
) -> list[SpinorState]:
    """Initialize with the init coin, then take ``T`` walk steps.

    Returns ``T + 1`` snapshots: the initialized state followed by the
    state after each walk step.
    """
    kick, se = config.kick, config.se
    state = initial_state(config)
    if config.init_kick:
        state = walk_step(state, config.init_coin, kick, se, rng, log, step=0)
    else:
        state = apply_coin(state, config.init_coin)
    snapshots = [state]
    for t in range(1, config.T + 1):
        state = walk_step(state, config.coin, kick, se, rng, log, step=t)
        snapshots.append(state)
    return snapshots


def se_rate_from_physical(k: float, tau_p: float, tau_se: float, delta: float, Delta: float) -> float:
    """SE event rate from the kick strength and the two detunings."""
    if delta == 0 or Delta == 0:
        raise DomainError("detunings must be nonzero")
    if not (k > 0 and tau_p > 0 and tau_se > 0):
        raise DomainError("k, tau_p and tau_se must be positive")
    return k / (tau_p * tau_se * abs(delta)) + k / (tau_p * tau_se * abs(Delta))
