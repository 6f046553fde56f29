import math
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from approxuq.errors import InvalidParameterError
from approxuq.solvers import (CohesiveConfig, CohesiveSolverPair, SyntheticSolverPair,
                              approx_cohesive_solve, element_energy, element_energy_closed_form,
                              exact_cohesive_solve, integrate_path, make_solver, realization_rng,
                              sample_fields, sample_pi_x, synthetic_pair)
from approxuq.solvers.synthetic import g

DEFAULT = CohesiveConfig()
CONSTANT = CohesiveConfig(dT0=0.0, dG0=0.0)


# ------------------------------------------------------------------ configuration

@pytest.mark.parametrize("bad", [dict(dT0=1.0), dict(dG0=0.6e-3), dict(rho=1.5), dict(z0=0.0),
                                 dict(delta_increment=1e-3), dict(n_elements=0)])
def test_config_rejects_invalid(bad):
    with pytest.raises(InvalidParameterError):
        CohesiveConfig(**bad)


def test_coarse_divisibility():
    with pytest.raises(InvalidParameterError):
        CohesiveSolverPair(CohesiveConfig(n_elements=1000, n_coarse=7))
    r = sample_fields(DEFAULT, 999, np.random.default_rng(0))
    with pytest.raises(InvalidParameterError):
        approx_cohesive_solve(r, DEFAULT)


# ------------------------------------------------------------------ random fields

def test_field_lag_one_autocorrelation():
    n = 100_000
    cfg = CohesiveConfig(z0=1e-5)  # e^{-1} correlation between neighbouring cells
    phi = math.exp(-1.0 / (n * cfg.z0))
    se = math.sqrt((1 - phi ** 2) / n)
    r1 = []
    for seed in range(10):
        h1 = sample_fields(cfg, n, np.random.default_rng(seed)).h1
        r1.append(np.corrcoef(h1[:-1], h1[1:])[0, 1])
    assert abs(np.mean(r1) - phi) < 3 * se / math.sqrt(10)
    assert np.all(np.abs(np.array(r1) - phi) < 4 * se)
    assert abs(h1.mean()) < 3 * math.sqrt((1 + phi) / (1 - phi) / n)
    assert h1.var() == pytest.approx(1.0, abs=0.03)


def test_constant_fields():
    r = sample_fields(CONSTANT, 500, np.random.default_rng(2))
    assert np.all(r.Tc == 1.0) and np.all(r.Gc == 1e-3)


def test_field_marginals_and_cross_dependence():
    n = 100_000
    cfg = CohesiveConfig(z0=1e-7)
    r = sample_fields(cfg, n, np.random.default_rng(3))
    assert np.all(r.Tc > 0) and np.all(r.Gc > 0)
    u1 = (r.Tc - cfg.T0) / cfg.dT0
    assert np.all(np.abs(u1) < 1)
    assert abs(r.Tc.mean() - cfg.T0) < 3 * r.Tc.std() / math.sqrt(n)
    assert abs(r.Gc.mean() - cfg.G0) < 3 * r.Gc.std() / math.sqrt(n)
    assert np.corrcoef(r.Tc, r.Gc)[0, 1] > 0


def test_fields_reproducible():
    a = sample_fields(DEFAULT, 100, realization_rng(5, 3))
    b = sample_fields(DEFAULT, 100, realization_rng(5, 3))
    assert np.array_equal(a.h1, b.h1) and np.array_equal(a.Gc, b.Gc)


def test_small_grid_rejected():
    with pytest.raises(InvalidParameterError):
        sample_fields(DEFAULT, 1)


# ------------------------------------------------------------------ integrator

def test_full_opening_releases_gc():
    Tc, Gc = 1.2, 1e-4  # delta_c = 1.67e-4 < delta_max
    assert element_energy(Tc, Gc, 0.5e-3, 0.5e-6) == pytest.approx(Gc, rel=1e-12)
    assert element_energy_closed_form(Tc, Gc, 0.5e-3) == Gc


@settings(max_examples=200, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(2e-4, 2e-3), st.floats(1e-6, 2e-3))
def test_integrator_matches_closed_form(Tc, Gc, delta_max):
    inc = delta_max / 1000
    got = element_energy(Tc, Gc, delta_max, inc)
    assert got == pytest.approx(element_energy_closed_form(Tc, Gc, delta_max), rel=1e-6)


def test_partial_opening_example():
    Tc, Gc, d = 1.0, 1e-3, 0.5e-3  # delta_c = 2e-3
    want = Tc * (d - d * d / (2 * 2e-3))
    assert element_energy(Tc, Gc, d, 0.5e-6) == pytest.approx(want, rel=1e-6)


def test_constant_fields_homogeneous():
    r = sample_fields(CONSTANT, 1000, np.random.default_rng(0))
    one = element_energy(1.0, 1e-3, CONSTANT.delta_max, CONSTANT.delta_increment)
    assert exact_cohesive_solve(r, CONSTANT) == pytest.approx(one, rel=1e-12)


def test_approx_matches_exact_on_constant_fields():
    r = sample_fields(CONSTANT, 1000, np.random.default_rng(0))
    exact = exact_cohesive_solve(r, CONSTANT)
    assert approx_cohesive_solve(r, CONSTANT) == pytest.approx(exact, rel=0.01)
    assert exact == pytest.approx(element_energy_closed_form(1.0, 1e-3, CONSTANT.delta_max), rel=1e-6)


def test_monotone_in_delta_max():
    r = sample_fields(DEFAULT, 1000, np.random.default_rng(4))
    ys = [exact_cohesive_solve(r, replace(DEFAULT, delta_max=d)) for d in np.linspace(0.05e-3, 1e-2, 12)]
    assert np.all(np.diff(ys) >= 0)
    assert ys[-1] == pytest.approx(r.Gc.mean(), rel=1e-9)  # every element fully open


def test_refinement_convergence():
    r = sample_fields(DEFAULT, 1000, np.random.default_rng(6))
    coarse = exact_cohesive_solve(r, DEFAULT)
    fine = exact_cohesive_solve(r, replace(DEFAULT, delta_increment=DEFAULT.delta_increment / 10))
    assert abs(fine - coarse) / fine < 1e-3


def test_unloading_and_reloading():
    Tc, Gc = 1.0, 1e-3
    dc = 2 * Gc / Tc
    d1, d2 = 0.4e-3, 1.0e-3
    up = np.linspace(0, d1, 401)
    down = np.linspace(d1, 0, 401)[1:]
    again = np.linspace(0, d2, 1001)[1:]
    T, W = integrate_path(Tc, Gc, np.concatenate([up, down, again]))
    t1 = Tc * (1 - d1 / dc)
    assert T[400] == pytest.approx(t1)
    # secant unloading returns elastic energy; what stays is dissipated
    assert W[800] == pytest.approx(element_energy_closed_form(Tc, Gc, d1) - 0.5 * t1 * d1, rel=1e-9)
    assert np.allclose(T[401:801], t1 * down / d1)
    assert W[-1] == pytest.approx(element_energy_closed_form(Tc, Gc, d2), rel=1e-9)
    # beyond delta_c traction vanishes and work saturates at Gc
    T, W = integrate_path(Tc, Gc, np.linspace(0, 3e-3, 3001))
    assert T[-1] == 0 and W[-1] == pytest.approx(Gc, rel=1e-12)


def test_runtime_ratio():
    solver = CohesiveSolverPair()
    xi = solver.draw(np.random.default_rng(0))
    solver.exact(xi), solver.approximate(xi)

    def best(fn, reps):
        out = []
        for _ in range(5):
            t = time.perf_counter()
            for _ in range(reps):
                fn(xi)
            out.append((time.perf_counter() - t) / reps)
        return min(out)

    ratio = best(solver.exact, 10) / best(solver.approximate, 100)
    assert ratio > 50


def test_one_to_many_structure():
    solver = CohesiveSolverPair()
    X, y = solver.generate(100, seed=11)
    x = X[:, 0]
    # a smooth map of x leaves a sizeable share of the spread of y unexplained
    resid = y - np.polyval(np.polyfit(x, y, 3), x)
    assert resid.std() > 0.1 * y.std()
    assert np.corrcoef(x, y)[0, 1] > 0


# ------------------------------------------------------------------ synthetic families

def test_synthetic_noise_free():
    s = SyntheticSolverPair("m1", noise=0.0)
    xi = np.array([0.3, 5.0])
    x, y = s.pair(xi)
    assert y == pytest.approx(float(g(x[0])), abs=1e-15)


def test_synthetic_pair_deterministic():
    xi = realization_rng(9, 0).standard_normal(3)
    a = synthetic_pair("m2", xi)
    b = synthetic_pair("m2", xi)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]
    with pytest.raises(InvalidParameterError):
        synthetic_pair("m2", xi[:2])


def test_synthetic_invalid_family():
    with pytest.raises(InvalidParameterError):
        SyntheticSolverPair("m3")


def _binned_within_variance(X, y, bins):
    idx = np.zeros(len(y), dtype=int)
    for j in range(X.shape[1]):
        idx = idx * bins + np.minimum((X[:, j] * bins).astype(int), bins - 1)
    total = 0.0
    for b in np.unique(idx):
        sel = idx == b
        total += sel.sum() * y[sel].var()
    return total / len(y)


def test_second_predictor_reduces_conditional_variance():
    s = SyntheticSolverPair("m2")
    X, y = s.draw_batch(100_000, np.random.default_rng(0))
    full = _binned_within_variance(X, y, 20)
    first = _binned_within_variance(X[:, :1], y, 20)
    assert full < first
    assert full == pytest.approx(s.conditional_variance(), rel=0.1)
    assert first == pytest.approx(s.conditional_variance(first_only=True), rel=0.1)


def test_exceedance_oracle_matches_simulation():
    for fam in ("m1", "m2"):
        s = SyntheticSolverPair(fam)
        _, y = s.draw_batch(400_000, np.random.default_rng(1))
        for y0 in (0.5, 1.2):
            p = np.mean(y > y0)
            assert s.exceedance_oracle(y0) == pytest.approx(p, abs=4 * math.sqrt(p * (1 - p) / len(y)))


def test_conditional_exceedance_oracle():
    s = SyntheticSolverPair("m1", noise=0.2)
    x = np.array([0.25])
    assert s.conditional_exceedance(x, float(g(0.25)))[0] == pytest.approx(0.5)


def test_generate_batches_are_prefix_consistent():
    s = SyntheticSolverPair("m1")
    X, y = s.generate(10, seed=4)
    X2, y2 = s.generate(4, seed=4, start=6)
    assert np.array_equal(X[6:], X2) and np.array_equal(y[6:], y2)
    assert np.array_equal(s.generate_x(10, seed=4), X)
    assert np.array_equal(s.generate_y(10, seed=4), y)


# ------------------------------------------------------------------ pi_x samples

def test_sample_pi_x_default_count():
    xs = sample_pi_x(SyntheticSolverPair("m1"), seed=0)
    assert len(xs) == 5000 and xs.provenance.startswith("monte-carlo")
    v = np.sort(xs.samples[:, 0])
    ecdf = np.searchsorted(v, v, side="right") / len(v)
    assert np.all(np.diff(ecdf) >= 0) and ecdf[-1] == 1.0


def test_sample_pi_x_constant_fields():
    xs = sample_pi_x(CohesiveSolverPair(CONSTANT), 20, seed=0)
    assert np.ptp(xs.samples) == 0


def test_sample_pi_x_reproducible():
    s = SyntheticSolverPair("m2")
    a = sample_pi_x(s, 50, seed=3)
    b = sample_pi_x(s, 50, rng=np.random.default_rng(99))
    c = sample_pi_x(s, 50, seed=3)
    assert np.array_equal(a.samples, c.samples) and not np.array_equal(a.samples, b.samples)


def test_make_solver():
    assert isinstance(make_solver("synthetic", family="m2"), SyntheticSolverPair)
    assert make_solver("cohesive", n_elements=100).config.n_elements == 100
    with pytest.raises(ValueError):
        make_solver("fem")
