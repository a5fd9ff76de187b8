import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aokrwalk.errors import FitError
from aokrwalk.observables import (
    MomentumDistribution,
    asymmetry,
    crossover_windows,
    detect_crossover,
    fit_power_law,
    mean_energy,
    mean_momentum,
    momentum_distribution,
    reflect,
)
from aokrwalk.qstate import MomentumGrid, SpinorState, make_ratchet_state

G = MomentumGrid(10, 2)


def delta(n, grid=G):
    p = np.zeros(grid.size)
    p[grid.index(n)] = 1
    return MomentumDistribution(p, grid)


def test_distribution_examples():
    amps = np.zeros((2, G.size), complex)
    amps[0, G.index(0)] = 1
    d = momentum_distribution(SpinorState(amps, 0.0, G))
    assert d[0] == 1 and d.total() == 1
    amps = np.zeros((2, G.size), complex)
    amps[0, G.index(1)] = amps[1, G.index(-1)] = 1 / math.sqrt(2)
    d = momentum_distribution(SpinorState(amps, 0.0, G))
    assert d[1] == pytest.approx(0.5) and d[-1] == pytest.approx(0.5)
    d = momentum_distribution(make_ratchet_state(3))
    for n in (-1, 0, 1):
        assert d[n] == pytest.approx(1 / 3, abs=1e-15)


def test_distribution_is_read_only():
    d = delta(0)
    with pytest.raises(ValueError):
        d.probs[0] = 1
    with pytest.raises(ValueError):
        MomentumDistribution(np.ones(3), G)


def test_asymmetry_examples():
    assert asymmetry(delta(2)) == 1
    assert asymmetry(delta(-2)) == -1
    assert asymmetry(delta(0)) == 0
    p = np.zeros(G.size)
    p[G.index(-1)], p[G.index(0)], p[G.index(1)] = 0.3, 0.4, 0.3
    assert asymmetry(MomentumDistribution(p, G)) == 0


def test_moments():
    d = delta(3)
    assert mean_momentum(d) == 3 and mean_energy(d) == 4.5
    r = momentum_distribution(make_ratchet_state(3))
    assert mean_momentum(r) == pytest.approx(0, abs=1e-15)
    assert mean_energy(r) == pytest.approx(1 / 3)


prob_vectors = arrays(np.float64, G.size, elements=st.floats(0, 1)).filter(lambda a: a.sum() > 1e-3)


@given(prob_vectors)
@settings(max_examples=200, deadline=None)
def test_asymmetry_bounds_and_reflection(p):
    d = MomentumDistribution(p / p.sum(), G)
    s = asymmetry(d)
    assert -1 - 1e-12 <= s <= 1 + 1e-12
    assert asymmetry(reflect(d)) == -s
    assert mean_momentum(reflect(d)) == pytest.approx(-mean_momentum(d), abs=1e-12)


@given(prob_vectors, prob_vectors, st.floats(0, 1))
@settings(max_examples=100, deadline=None)
def test_asymmetry_linear(p, q, w):
    p, q = p / p.sum(), q / q.sum()
    mix = MomentumDistribution(w * p + (1 - w) * q, G)
    expected = w * asymmetry(MomentumDistribution(p, G)) + (1 - w) * asymmetry(MomentumDistribution(q, G))
    assert asymmetry(mix) == pytest.approx(expected, abs=1e-12)


def test_distribution_csv(tmp_path):
    path = tmp_path / "d.csv"
    delta(1).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,prob"
    assert lines[1] == "-10,0.0" and lines[12] == "1,1.0"


# -- fits


T10 = np.arange(1, 11)


def test_fit_exact_laws():
    f = fit_power_law(T10, 0.1 * T10, (1, 10))
    assert abs(f.exponent_a - 1) < 1e-12
    assert f.log_prefactor == pytest.approx(math.log(0.1), abs=1e-12)
    assert f.n_points == 10 and f.n_excluded == 0
    f = fit_power_law(T10, 0.1 * np.sqrt(T10), (1, 10))
    assert abs(f.exponent_a - 0.5) < 1e-12
    assert f.residual_rms < 1e-12


def test_fit_noise_calibration():
    rng = np.random.default_rng(11)
    slopes = [
        fit_power_law(T10, 0.1 * T10 * (1 + rng.uniform(-0.05, 0.05, T10.size)), (1, 10)).exponent_a
        for _ in range(100)
    ]
    assert max(abs(a - 1) for a in slopes) < 0.05


def test_fit_excludes_nonpositive():
    s = 0.1 * T10.astype(float)
    s[[2, 5]] = [-0.3, 0.0]
    f = fit_power_law(T10, s, (1, 10))
    assert f.n_points == 8 and f.n_excluded == 2
    assert abs(f.exponent_a - 1) < 1e-12


def test_fit_errors():
    with pytest.raises(FitError):
        fit_power_law(T10, -T10.astype(float), (1, 10))
    with pytest.raises(FitError):
        fit_power_law(T10, T10.astype(float), (0, 10))
    with pytest.raises(FitError):
        fit_power_law(T10, T10.astype(float), (4, 5))
    with pytest.raises(ValueError):
        fit_power_law(T10, T10[:-1], (1, 10))


@given(st.floats(1e-6, 1e6))
@settings(max_examples=50, deadline=None)
def test_fit_scale_invariance(c):
    s = 0.2 * T10**0.7
    a = fit_power_law(T10, s, (1, 10))
    b = fit_power_law(T10, c * s, (1, 10))
    assert b.exponent_a == pytest.approx(a.exponent_a, abs=1e-9)
    assert b.log_prefactor - a.log_prefactor == pytest.approx(math.log(c), abs=1e-9)


def test_crossover_windows():
    assert crossover_windows(20) == ((2, 7), (14, 20))
    assert crossover_windows(15) == ((2, 5), (10, 15))


def test_crossover_examples():
    t = np.arange(0, 21)
    early, late = detect_crossover(t, 0.05 * t)
    assert early.exponent_a == pytest.approx(1, abs=1e-12) and late.exponent_a == pytest.approx(1, abs=1e-12)
    # t^1 up to T/2, then continuous t^0.5
    s = np.where(t <= 10, 0.05 * t, 0.05 * 10 * np.sqrt(np.maximum(t, 1) / 10))
    early, late = detect_crossover(t, s)
    assert abs(early.exponent_a - 1) < 0.1 and abs(late.exponent_a - 0.5) < 0.1
    early, late = detect_crossover(t, np.full(t.size, 0.3))
    assert abs(early.exponent_a) < 0.05 and abs(late.exponent_a) < 0.05


def test_crossover_needs_points():
    with pytest.raises(FitError):
        detect_crossover(np.arange(7), np.arange(7) + 1.0)
