"""Parameter studies over the ensemble engine.

* :func:`scan_bloch_grid` -- asymmetry after the last step over a
  ``(gamma, alpha)`` grid of balanced coins;
* :func:`sweep_pse` -- final-step asymmetry against SE probability and
  initial width ``J``;
* :func:`time_series` -- asymmetry against time for several SE
  probabilities, with early/late power-law fits.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ensemble import EnsembleConfig, derive_seed, run_ensemble
from .errors import AokrError, ConfigError, FitError, TrajectoryError, TruncationError
from .observables import PowerLawFit, detect_crossover
from .qstate import BlochAngles, coin_from_bloch

__all__ = [
    "BlochScanSpec",
    "ScanResult",
    "scan_bloch_grid",
    "SweepTable",
    "sweep_pse",
    "Regime",
    "classify_regime",
    "TimeSeriesResult",
    "time_series",
]

TWO_PI = 2 * math.pi
# |S| below this is floating-point residue of an exactly symmetric walk
ROUNDING_FLOOR = 1e-12
_ANGLE_SLACK = 1e-12


def angle_axis(lo: float, hi: float, count: int) -> np.ndarray:
    return lo + (hi - lo) * np.arange(count) / (count - 1)


@dataclass(frozen=True)
class BlochScanSpec:
    """Grid of balanced coins; ranges are ``(lo, hi, count)`` in radians."""

    gamma_range: tuple[float, float, int] = (0.0, TWO_PI, 48)
    alpha_range: tuple[float, float, int] = (0.0, TWO_PI, 48)
    ensemble: EnsembleConfig = field(default_factory=lambda: EnsembleConfig(n_trajectories=1))

    def __post_init__(self) -> None:
        for name in ("gamma_range", "alpha_range"):
            lo, hi, count = getattr(self, name)
            if int(count) != count or count < 2:
                raise ConfigError("needs at least 2 grid points", key=name)
            if not (-_ANGLE_SLACK <= lo <= hi <= TWO_PI + _ANGLE_SLACK):
                raise ConfigError(f"range [{lo}, {hi}] not inside [0, 2 pi]", key=name)
            object.__setattr__(self, name, (float(lo), float(hi), int(count)))

    @property
    def gamma_axis(self) -> np.ndarray:
        return angle_axis(*self.gamma_range)

    @property
    def alpha_axis(self) -> np.ndarray:
        return angle_axis(*self.alpha_range)

    def to_dict(self) -> dict:
        return {
            "gamma_range": list(self.gamma_range),
            "alpha_range": list(self.alpha_range),
            "ensemble": self.ensemble.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> BlochScanSpec:
        return cls(tuple(d["gamma_range"]), tuple(d["alpha_range"]), EnsembleConfig.from_dict(d["ensemble"]))


@dataclass(frozen=True, eq=False)
class ScanResult:
    s_matrix: np.ndarray  # (alpha, gamma)
    s_stderr: np.ndarray
    gamma_axis: np.ndarray
    alpha_axis: np.ndarray
    gamma_indices: tuple[int, ...]
    alpha_indices: tuple[int, ...]
    trajectories_per_cell: int
    n_sentinel: int
    provenance: dict

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha\\gamma"] + [repr(float(g)) for g in self.gamma_axis])
            for a, row in zip(self.alpha_axis, self.s_matrix):
                w.writerow([repr(float(a))] + [repr(float(v)) for v in row])

    def axes_dict(self) -> dict:
        return {
            "gamma": [float(g) for g in self.gamma_axis],
            "alpha": [float(a) for a in self.alpha_axis],
            "gamma_indices": list(self.gamma_indices),
            "alpha_indices": list(self.alpha_indices),
            "trajectories_per_cell": self.trajectories_per_cell,
            "n_sentinel": self.n_sentinel,
            "s_stderr": [[float(v) for v in row] for row in self.s_stderr],
            "provenance": self.provenance,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.axes_dict(), fh, indent=2, sort_keys=True)


def _is_truncation(exc: AokrError) -> bool:
    if isinstance(exc, TrajectoryError):
        exc = exc.cause
    return isinstance(exc, TruncationError)


def scan_bloch_grid(
    spec: BlochScanSpec,
    threads: int = 1,
    alpha_indices=None,
    gamma_indices=None,
    progress=None,
) -> ScanResult:
    """Final-step asymmetry for every ``(gamma, alpha)`` cell.

    Cell ``(ia, ig)`` of the full grid always uses the child seed
    ``derive_seed(master_seed, ia * n_gamma + ig)``, so scanning a
    sub-grid (``alpha_indices``/``gamma_indices``) reproduces the
    corresponding cells of the full scan exactly. Cells that run off the
    momentum grid are stored as NaN and counted in ``n_sentinel``.
    """
    g_full, a_full = spec.gamma_axis, spec.alpha_axis
    gi = tuple(range(g_full.size)) if gamma_indices is None else tuple(int(i) for i in gamma_indices)
    ai = tuple(range(a_full.size)) if alpha_indices is None else tuple(int(i) for i in alpha_indices)
    template = spec.ensemble
    master = template.master_seed

    def cell(pos):
        ia, ig = pos
        coin = coin_from_bloch(BlochAngles.balanced(float(g_full[ig]), float(a_full[ia])))
        cfg = template.replace(
            coin=coin,
            coin_label=f"M(pi/4,{g_full[ig]!r},{a_full[ia]!r})",
            master_seed=derive_seed(master, ia * g_full.size + ig),
        )
        try:
            res = run_ensemble(cfg)
        except AokrError as exc:
            if _is_truncation(exc):
                return math.nan, math.nan
            exc.args = (f"cell (alpha_index={ia}, gamma_index={ig}): {exc}",)
            raise
        return float(res.s_mean[-1]), float(res.s_stderr[-1])

    cells = [(ia, ig) for ia in ai for ig in gi]
    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(cell, cells))
    else:
        values = []
        for k, c in enumerate(cells):
            values.append(cell(c))
            if progress:
                progress(k + 1, len(cells))
    s = np.array([v[0] for v in values]).reshape(len(ai), len(gi))
    err = np.array([v[1] for v in values]).reshape(len(ai), len(gi))
    return ScanResult(
        s_matrix=s,
        s_stderr=err,
        gamma_axis=g_full[list(gi)],
        alpha_axis=a_full[list(ai)],
        gamma_indices=gi,
        alpha_indices=ai,
        trajectories_per_cell=template.total_trajectories,
        n_sentinel=int(np.isnan(s).sum()),
        provenance=spec.to_dict(),
    )


def _write_long_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["p_se", "J", "t", "S", "stderr"])
        for p, J, t, s, e in rows:
            w.writerow([repr(float(p)), int(J), int(t), repr(float(s)), repr(float(e))])


@dataclass(frozen=True, eq=False)
class SweepTable:
    p_list: np.ndarray
    J_list: np.ndarray
    T: int
    s: np.ndarray  # (p, J)
    stderr: np.ndarray

    def rows(self):
        for ip, p in enumerate(self.p_list):
            for iJ, J in enumerate(self.J_list):
                yield p, J, self.T, self.s[ip, iJ], self.stderr[ip, iJ]

    def to_csv(self, path) -> None:
        _write_long_csv(path, self.rows())

    def best_p(self, J: int) -> float:
        """SE probability of largest ``|S|`` for width ``J``."""
        iJ = list(self.J_list).index(J)
        return float(self.p_list[int(np.argmax(np.abs(self.s[:, iJ])))])

    def peak_abs(self, J: int) -> float:
        iJ = list(self.J_list).index(J)
        return float(np.max(np.abs(self.s[:, iJ])))


def sweep_pse(
    template: EnsembleConfig,
    p_list,
    J_list,
    n_trajectories: int | None = None,
    threads: int = 1,
) -> SweepTable:
    """Final-step ``S`` for every ``(p_se, J)`` pair; seeds derive from the pair's indices."""
    p_arr = np.asarray(p_list, dtype=float)
    J_arr = np.asarray(J_list, dtype=int)
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise ConfigError("SE probabilities must lie in [0, 1]", key="p_list")
    if n_trajectories is not None:
        template = template.replace(n_trajectories=n_trajectories)
    s = np.empty((p_arr.size, J_arr.size))
    err = np.empty_like(s)
    for ip, p in enumerate(p_arr):
        for iJ, J in enumerate(J_arr):
            cfg = template.replace(p_se=float(p), J=int(J), master_seed=derive_seed(template.master_seed, ip, iJ))
            res = run_ensemble(cfg, threads=threads)
            s[ip, iJ] = res.s_mean[-1]
            err[ip, iJ] = res.s_stderr[-1]
    return SweepTable(p_arr, J_arr, template.walk.T, s, err)


class Regime(enum.Enum):
    QUANTUM = "quantum"
    CROSSOVER = "crossover"
    CLASSICAL = "classical"


# late-window exponent thresholds
BALLISTIC_MIN = 0.85
CLASSICAL_MAX = 0.25


def classify_regime(early: PowerLawFit, late: PowerLawFit) -> Regime:
    """Ballistic to the end, sub-ballistic late, or saturated/declining late."""
    if late.exponent_a >= BALLISTIC_MIN:
        return Regime.QUANTUM
    if late.exponent_a <= CLASSICAL_MAX:
        return Regime.CLASSICAL
    return Regime.CROSSOVER


@dataclass(frozen=True, eq=False)
class TimeSeriesResult:
    p_list: np.ndarray
    J: int
    times: np.ndarray
    s: np.ndarray  # (p, t)
    stderr: np.ndarray
    direction: np.ndarray  # sign the fits were oriented by, per p
    fits: list  # (early, late) or None when a fit was impossible
    regimes: list

    def rows(self):
        for ip, p in enumerate(self.p_list):
            for it, t in enumerate(self.times):
                yield p, self.J, t, self.s[ip, it], self.stderr[ip, it]

    def to_csv(self, path) -> None:
        _write_long_csv(path, self.rows())

    def fits_dict(self) -> list[dict]:
        out = []
        for p, d, fit, reg in zip(self.p_list, self.direction, self.fits, self.regimes):
            entry = {"p_se": float(p), "direction": int(d)}
            if fit is None:
                entry.update(early=None, late=None, regime=None)
            else:
                entry.update(early=fit[0].to_dict(), late=fit[1].to_dict(), regime=reg.value)
            out.append(entry)
        return out


def oriented_crossover(times, s) -> tuple[int, tuple[PowerLawFit, PowerLawFit]]:
    """Fit ``S(t)`` along its dominant sign.

    The ratchet direction is taken from the sign of the summed series;
    samples of the opposite sign are excluded by the fit, not folded.
    A series that vanishes up to rounding raises :class:`FitError`.
    """
    s = np.asarray(s, dtype=float)
    if not np.max(np.abs(s)) > ROUNDING_FLOOR:
        raise FitError("asymmetry is zero up to rounding; nothing to fit")
    direction = 1 if float(np.sum(s)) >= 0 else -1
    return direction, detect_crossover(times, direction * s)


def time_series(
    template: EnsembleConfig,
    p_list,
    T_max: int,
    n_trajectories: int | None = None,
    threads: int = 1,
) -> TimeSeriesResult:
    if T_max < 8:
        raise ConfigError("time series need T_max >= 8", key="T")
    p_arr = np.asarray(p_list, dtype=float)
    template = template.replace(T=int(T_max))
    if n_trajectories is not None:
        template = template.replace(n_trajectories=n_trajectories)
    times = np.arange(T_max + 1)
    s = np.empty((p_arr.size, times.size))
    err = np.empty_like(s)
    directions, fits, regimes = [], [], []
    for ip, p in enumerate(p_arr):
        cfg = template.replace(p_se=float(p), master_seed=derive_seed(template.master_seed, ip))
        res = run_ensemble(cfg, threads=threads)
        s[ip] = res.s_mean
        err[ip] = res.s_stderr
        try:
            d, fit = oriented_crossover(times, res.s_mean)
        except FitError:
            directions.append(0)
            fits.append(None)
            regimes.append(None)
            continue
        directions.append(d)
        fits.append(fit)
        regimes.append(classify_regime(*fit))
    return TimeSeriesResult(p_arr, template.walk.J, times, s, err, np.array(directions), fits, regimes)
