"""Momentum distributions, the left/right asymmetry and power-law fits."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import FitError
from .qstate import MomentumGrid, SpinorState

__all__ = [
    "MomentumDistribution",
    "PowerLawFit",
    "momentum_distribution",
    "asymmetry",
    "asymmetry_arrays",
    "mean_momentum",
    "mean_energy",
    "reflect",
    "fit_power_law",
    "detect_crossover",
]


@dataclass(frozen=True, eq=False)
class MomentumDistribution:
    probs: np.ndarray
    grid: MomentumGrid

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        if probs.shape != (self.grid.size,):
            raise ValueError(f"distribution must have {self.grid.size} entries, got {probs.shape}")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    def __getitem__(self, n: int) -> float:
        return float(self.probs[self.grid.index(n)])

    def total(self) -> float:
        return float(self.probs.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "prob"])
            for n, p in zip(self.grid.n, self.probs):
                w.writerow([int(n), repr(float(p))])


def momentum_distribution(state: SpinorState) -> MomentumDistribution:
    a = state.amps
    return MomentumDistribution((a.real**2 + a.imag**2).sum(axis=0), state.grid)


def asymmetry_arrays(probs: np.ndarray, n_max: int) -> np.ndarray:
    """Right-minus-left probability along the last axis; class 0 counts for neither side.

    Both sides are summed outward from ``|n| = 1`` so mirroring the
    distribution flips the sign of the result exactly.
    """
    right = probs[..., n_max + 1 :]
    left = np.ascontiguousarray(probs[..., n_max - 1 :: -1])
    return right.sum(axis=-1) - left.sum(axis=-1)


def asymmetry(dist: MomentumDistribution) -> float:
    return float(asymmetry_arrays(dist.probs, dist.grid.n_max))


def mean_momentum(dist: MomentumDistribution) -> float:
    return float(np.dot(dist.grid.n, dist.probs))


def mean_energy(dist: MomentumDistribution) -> float:
    n = dist.grid.n
    return float(np.dot(n * n, dist.probs)) / 2


def reflect(dist: MomentumDistribution) -> MomentumDistribution:
    """Mirror ``n -> -n``."""
    return MomentumDistribution(dist.probs[::-1], dist.grid)


@dataclass(frozen=True)
class PowerLawFit:
    exponent_a: float
    log_prefactor: float
    residual_rms: float
    t_window: tuple[int, int]
    n_points: int
    n_excluded: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["t_window"] = list(self.t_window)
        return d


def fit_power_law(times, s_values, window: tuple[int, int] | None = None) -> PowerLawFit:
    """Least-squares line through ``(ln t, ln S)``.

    Only points inside ``window`` (inclusive) with ``S > 0`` enter the fit;
    in-window points with ``S <= 0`` are counted in ``n_excluded``.
    """
    t = np.asarray(times, dtype=float)
    s = np.asarray(s_values, dtype=float)
    if t.shape != s.shape:
        raise ValueError("times and s_values must have the same shape")
    if window is None:
        window = (max(1, int(t.min())), int(t.max()))
    t_min, t_max = int(window[0]), int(window[1])
    if t_min < 1 or t_max < t_min:
        raise FitError(f"invalid fit window {window}")
    in_window = (t >= t_min) & (t <= t_max)
    ok = in_window & (s > 0)
    n_ok = int(ok.sum())
    if n_ok < 3:
        raise FitError(f"only {n_ok} admissible points in window {window}; need 3")
    x = np.log(t[ok])
    y = np.log(s[ok])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    return PowerLawFit(
        exponent_a=float(slope),
        log_prefactor=float(intercept),
        residual_rms=float(math.sqrt(np.mean(resid**2))),
        t_window=(t_min, t_max),
        n_points=n_ok,
        n_excluded=int(in_window.sum()) - n_ok,
    )


def crossover_windows(T: int) -> tuple[tuple[int, int], tuple[int, int]]:
    return (2, math.ceil(T / 3)), (math.ceil(2 * T / 3), T)


def detect_crossover(times, s_values) -> tuple[PowerLawFit, PowerLawFit]:
    """Separate fits over the first and last third of the time range."""
    t = np.asarray(times)
    if np.unique(t).size < 8:
        raise FitError("crossover detection needs at least 8 time points")
    early, late = crossover_windows(int(t.max()))
    return fit_power_law(times, s_values, early), fit_power_law(times, s_values, late)
