"""Monte Carlo ensembles over SE trajectories and initial quasimomenta.

Trajectories are evolved in batches. Every trajectory follows the
coherent (event-free) reference walk of its quasimomentum sample until
its first SE event, so only trajectories that have already branched are
propagated explicitly; the rest are accounted for through the reference.
SE events do not depend on the wavefunction, so each trajectory's event
schedule is drawn up front from its own derived random stream, in the
same order :func:`aokrwalk.evolution.run_walk` consumes it.

Work is split into fixed-size chunks of trajectory indices and reduced
in chunk order, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AokrError, ConfigError, TrajectoryError, TruncationError
from .evolution import (
    SeEvent,
    WalkConfig,
    draw_kick_events,
    drift_phase,
    initial_state,
    kick_arrays,
    project_with_resample,
    wrap_beta,
)
from .observables import MomentumDistribution, asymmetry_arrays
from .qstate import MomentumGrid, coin_arrays

__all__ = [
    "EnsembleConfig",
    "EnsembleResult",
    "FWHM_TO_SIGMA",
    "sample_initial_beta",
    "derive_trajectory_rng",
    "derive_beta_rng",
    "run_ensemble",
]

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
CHUNK_SIZE = 256
_TRAJECTORY_STREAM = 0
_BETA_STREAM = 1

ProgressSink = Callable[[int, int], None]


@dataclass(frozen=True)
class EnsembleConfig:
    walk: WalkConfig = field(default_factory=WalkConfig)
    n_trajectories: int = 1000
    n_beta_samples: int = 1
    beta_fwhm: float = 0.0
    master_seed: int = 0

    def __post_init__(self) -> None:
        if int(self.n_trajectories) != self.n_trajectories or self.n_trajectories < 1:
            raise ConfigError("must be a positive integer", key="n_trajectories")
        if int(self.n_beta_samples) != self.n_beta_samples or self.n_beta_samples < 1:
            raise ConfigError("must be a positive integer", key="n_beta_samples")
        if not self.beta_fwhm >= 0:
            raise ConfigError(f"must be >= 0, got {self.beta_fwhm}", key="beta_fwhm")
        if self.beta_fwhm == 0 and self.n_beta_samples != 1:
            raise ConfigError("a zero quasimomentum width needs exactly one sample", key="n_beta_samples")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", key="master_seed")

    @property
    def total_trajectories(self) -> int:
        return self.n_trajectories * self.n_beta_samples

    def replace(self, **changes) -> EnsembleConfig:
        walk_changes = {k: changes.pop(k) for k in list(changes) if k in WalkConfig.__dataclass_fields__}
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        if walk_changes:
            values["walk"] = values["walk"].replace(**walk_changes)
        return EnsembleConfig(**values)

    def to_dict(self) -> dict:
        return {
            "walk": self.walk.to_dict(),
            "n_trajectories": self.n_trajectories,
            "n_beta_samples": self.n_beta_samples,
            "beta_fwhm": self.beta_fwhm,
            "master_seed": int(self.master_seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleConfig:
        d = dict(d)
        d["walk"] = WalkConfig.from_dict(d["walk"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Per-step ensemble averages.

    ``probs`` has shape ``(T + 1, N)``; ``s_trajectories`` holds the
    asymmetry of every trajectory, shape ``(n_total, T + 1)``, in
    beta-major, trajectory-minor order.
    """

    grid: MomentumGrid
    probs: np.ndarray
    s_mean: np.ndarray
    s_stderr: np.ndarray
    s_trajectories: np.ndarray
    n_trajectories: int
    n_events: int
    n_kicks: int
    betas: np.ndarray

    @property
    def mean_dists(self) -> list[MomentumDistribution]:
        return [MomentumDistribution(p, self.grid) for p in self.probs]

    @property
    def event_rate_observed(self) -> float:
        return self.n_events / self.n_kicks if self.n_kicks else 0.0

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.probs.shape[0])


def sample_initial_beta(rng: np.random.Generator, beta_fwhm: float) -> float:
    """Gaussian quasimomentum of the given FWHM around 0, wrapped into [0, 1)."""
    if beta_fwhm < 0:
        raise ConfigError(f"must be >= 0, got {beta_fwhm}", key="beta_fwhm")
    if beta_fwhm == 0:
        return 0.0
    return wrap_beta(float(rng.normal(0.0, beta_fwhm * FWHM_TO_SIGMA)))


def _generator(master_seed: int, key: tuple[int, ...]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master_seed), spawn_key=key)))


def derive_trajectory_rng(master_seed: int, beta_index: int, trajectory_index: int) -> np.random.Generator:
    if beta_index < 0 or trajectory_index < 0:
        raise ValueError("indices must be non-negative")
    return _generator(master_seed, (_TRAJECTORY_STREAM, int(beta_index), int(trajectory_index)))


def derive_beta_rng(master_seed: int, beta_index: int) -> np.random.Generator:
    if beta_index < 0:
        raise ValueError("index must be non-negative")
    return _generator(master_seed, (_BETA_STREAM, int(beta_index)))


def derive_seed(master_seed: int, *key: int) -> int:
    """A child 64-bit master seed, e.g. for one cell of a parameter scan."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def initial_betas(config: EnsembleConfig) -> np.ndarray:
    if config.beta_fwhm == 0:
        return np.array([config.walk.beta0])
    return np.array(
        [sample_initial_beta(derive_beta_rng(config.master_seed, b), config.beta_fwhm) for b in range(config.n_beta_samples)]
    )


# ---------------------------------------------------------------------------
# engine


def _kick_steps(walk: WalkConfig) -> list[int]:
    """Step indices that carry a pulse."""
    first = 0 if walk.init_kick else 1
    return list(range(first, walk.T + 1))


def _schedule(walk: WalkConfig, rng: np.random.Generator) -> list[SeEvent]:
    p_event = walk.se.p_event(walk.h)
    if p_event <= 0:
        return []
    events: list[SeEvent] = []
    for step in _kick_steps(walk):
        events.extend(draw_kick_events(rng, p_event, walk.h, step))
    return events


@dataclass
class _ChunkResult:
    beta_index: int
    ref_probs: np.ndarray           # (T+1, N)
    n_on_ref: np.ndarray            # (T+1,) trajectories still on the reference
    active_sum: np.ndarray          # (T+1, N) summed distributions of branched rows
    s_traj: np.ndarray              # (chunk, T+1)
    n_events: int
    records: list[dict]


class _Batch:
    """Branched trajectories evolved together."""

    def __init__(self, n: np.ndarray, walk: WalkConfig):
        self.n = n
        self.walk = walk
        size = n.size
        self.amps = np.zeros((0, 2, size), dtype=np.complex128)
        self.beta = np.zeros(0)
        self.ids: list[int] = []
        self.sub_phase = np.zeros((0, size), dtype=np.complex128)
        self.talbot_phase = np.zeros((0, size), dtype=np.complex128)

    def __len__(self) -> int:
        return len(self.ids)

    def _phases(self, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = self.walk
        return drift_phase(self.n, beta, w.tau_p / w.h), drift_phase(self.n, beta, w.talbot - w.tau_p)

    def add(self, ids: list[int], amps: np.ndarray, beta: float) -> None:
        betas = np.full(len(ids), beta)
        sub, tal = self._phases(betas)
        self.amps = np.concatenate([self.amps, np.broadcast_to(amps, (len(ids),) + amps.shape)])
        self.beta = np.concatenate([self.beta, betas])
        self.sub_phase = np.concatenate([self.sub_phase, sub])
        self.talbot_phase = np.concatenate([self.talbot_phase, tal])
        self.ids.extend(ids)

    def shift_beta(self, row: int, delta: float) -> None:
        self.beta[row] = wrap_beta(self.beta[row] + delta)
        sub, tal = self._phases(self.beta[row : row + 1])
        self.sub_phase[row] = sub[0]
        self.talbot_phase[row] = tal[0]


def _leakage_rows(grid: MomentumGrid, amps: np.ndarray) -> np.ndarray:
    from .qstate import LEAKAGE_TOL

    return np.flatnonzero(grid.edge_probability(amps) >= LEAKAGE_TOL)


def _run_chunk(config: EnsembleConfig, beta_index: int, beta0: float, traj_ids: range, keep_events: bool) -> _ChunkResult:
    walk = config.walk
    grid = walk.grid
    n = grid.n
    n_max = grid.n_max
    T = walk.T
    strength = walk.k / walk.h

    # event schedules, indexed by position in the chunk
    starts: dict[tuple[int, int], list[int]] = {}
    at: dict[tuple[int, int], list[tuple[int, SeEvent]]] = {}
    n_events = 0
    records: list[dict] = []
    for pos, t_idx in enumerate(traj_ids):
        events = _schedule(walk, derive_trajectory_rng(config.master_seed, beta_index, t_idx))
        n_events += len(events)
        if events:
            first = events[0]
            starts.setdefault((first.step, first.subkick), []).append(pos)
        for ev in events:
            at.setdefault((ev.step, ev.subkick), []).append((pos, ev))
            if keep_events:
                records.append({"beta_index": beta_index, "trajectory_index": t_idx, **ev.to_dict()})

    size = len(traj_ids)
    ref = initial_state(walk).replace(beta=beta0).amps
    ref = ref[None]  # batch of one
    ref_sub = drift_phase(n, np.array([beta0]), walk.tau_p / walk.h)
    ref_tal = drift_phase(n, np.array([beta0]), walk.talbot - walk.tau_p)

    batch = _Batch(n, walk)
    row_of: dict[int, int] = {}
    ref_probs = np.empty((T + 1, grid.size))
    active_sum = np.zeros((T + 1, grid.size))
    n_on_ref = np.empty(T + 1, dtype=np.int64)
    s_traj = np.empty((size, T + 1))
    branched = np.zeros(size, dtype=bool)

    def fail(pos: int, exc: AokrError) -> TrajectoryError:
        return TrajectoryError(beta_index, traj_ids[pos], exc)

    def first_on_ref() -> int:
        return int(np.flatnonzero(~branched)[0]) if not branched.all() else 0

    for step in range(T + 1):
        coin = walk.init_coin if step == 0 else walk.coin
        ref = coin_arrays(coin, ref)
        if len(batch):
            batch.amps = coin_arrays(coin, batch.amps)
        if step > 0 or walk.init_kick:
            for j in range(walk.h):
                ref = kick_arrays(ref, strength, n_max) if strength else ref
                ref = ref * ref_sub[..., None, :]
                if _leakage_rows(grid, ref).size:
                    raise fail(first_on_ref(), TruncationError(f"edge leakage at step {step}"))
                if len(batch):
                    if strength:
                        batch.amps = kick_arrays(batch.amps, strength, n_max)
                    batch.amps = batch.amps * batch.sub_phase[:, None, :]
                    bad = _leakage_rows(grid, batch.amps)
                    if bad.size:
                        raise fail(batch.ids[bad[0]], TruncationError(f"edge leakage at step {step}"))
                new = starts.get((step, j))
                if new:
                    for i, pos in enumerate(new):
                        row_of[pos] = len(batch) + i
                    batch.add(new, ref[0], beta0)
                    branched[new] = True
                for pos, ev in at.get((step, j), ()):
                    row = row_of[pos]
                    try:
                        batch.amps[row] = project_with_resample(batch.amps[row], ev.branch)
                    except AokrError as exc:
                        raise fail(pos, exc) from exc
                    batch.shift_beta(row, ev.delta_beta)
            ref = ref * ref_tal[..., None, :]
            if len(batch):
                batch.amps = batch.amps * batch.talbot_phase[:, None, :]
        p_ref = (ref.real**2 + ref.imag**2).sum(axis=-2)[0]
        ref_probs[step] = p_ref
        s_traj[~branched, step] = asymmetry_arrays(p_ref, n_max)
        n_on_ref[step] = size - len(batch)
        if len(batch):
            p = (batch.amps.real**2 + batch.amps.imag**2).sum(axis=-2)
            active_sum[step] = p.sum(axis=0)
            s_traj[batch.ids, step] = asymmetry_arrays(p, n_max)
    return _ChunkResult(beta_index, ref_probs, n_on_ref, active_sum, s_traj, n_events, records)


def _pairwise_sum(parts: list[np.ndarray]) -> np.ndarray:
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def run_ensemble(
    config: EnsembleConfig,
    progress: ProgressSink | None = None,
    threads: int = 1,
    event_log: Callable[[dict], None] | None = None,
) -> EnsembleResult:
    """Average ``n_beta_samples x n_trajectories`` walks.

    Bitwise reproducible for a given config at any ``threads``.
    """
    walk = config.walk
    betas = initial_betas(config)
    n_total = config.total_trajectories
    items = [
        (b, range(lo, min(lo + CHUNK_SIZE, config.n_trajectories)))
        for b in range(config.n_beta_samples)
        for lo in range(0, config.n_trajectories, CHUNK_SIZE)
    ]
    keep = event_log is not None

    def work(item):
        b, ids = item
        return _run_chunk(config, b, float(betas[b]), ids, keep)

    results: list[_ChunkResult] = []
    done = 0
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for res in pool.map(work, items):
                results.append(res)
                done += len(res.s_traj)
                if progress:
                    progress(done, n_total)
    else:
        for item in items:
            res = work(item)
            results.append(res)
            done += len(res.s_traj)
            if progress:
                progress(done, n_total)

    # reference walks enter with weight (# trajectories still on them) / n_total
    on_ref: dict[int, np.ndarray] = {}
    ref_probs: dict[int, np.ndarray] = {}
    for res in results:
        on_ref[res.beta_index] = on_ref.get(res.beta_index, 0) + res.n_on_ref
        ref_probs.setdefault(res.beta_index, res.ref_probs)
    parts = [(on_ref[b] / n_total)[:, None] * ref_probs[b] for b in sorted(on_ref)]
    parts += [res.active_sum / n_total for res in results]
    probs = _pairwise_sum(parts)

    s_traj = np.concatenate([res.s_traj for res in results])
    s_mean = asymmetry_arrays(probs, walk.n_max)
    if n_total > 1:
        spread = np.ptp(s_traj, axis=0) > 0
        s_stderr = np.where(spread, s_traj.std(axis=0, ddof=1) / math.sqrt(n_total), 0.0)
    else:
        s_stderr = np.zeros(walk.T + 1)
    if event_log is not None:
        for res in results:
            for rec in res.records:
                event_log(rec)
    n_kicks = n_total * len(_kick_steps(walk))
    return EnsembleResult(
        grid=walk.grid,
        probs=probs,
        s_mean=s_mean,
        s_stderr=s_stderr,
        s_trajectories=s_traj,
        n_trajectories=n_total,
        n_events=sum(res.n_events for res in results),
        n_kicks=n_kicks,
        betas=betas,
    )
