import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from approxuq import predict, smc
from approxuq.errors import InvalidParameterError
from approxuq.estimator import ApproximateSolverRegressor
from approxuq.model import Hyperparameters, KernelExpansion, evaluate_expansion
from approxuq.solvers import SyntheticSolverPair

from .oracles import PHI_1645


def frozen(particles, weights=None, data=((0.5, 1.0),), hyper=None, meta=None):
    """Population with the given (a0, [(amp, tau, center), ...]) particles and assimilated data."""
    hyper = hyper or Hyperparameters(M=1, k_max=3)
    N = max(len(particles), 2)
    pop = smc.init_population(N, hyper, seed=0)
    for x, y in data:
        pop.set_next_pair([x], y)
        pop._fold_next_pair()
    if len(particles) == 1:
        particles = particles * 2
        weights = [1.0, 0.0]
    for i, (a0, kernels) in enumerate(particles):
        pop.k[i] = len(kernels)
        pop.a0[i] = a0
        for j, (amp, tau, c) in enumerate(kernels):
            pop.amps[i, j], pop.taus[i, j], pop.centers[i, j, 0] = amp, tau, c
    if weights is not None:
        with np.errstate(divide="ignore"):
            pop.log_w = np.log(np.asarray(weights, dtype=float))
    pop.meta = dict(meta or {})
    pop.refresh()
    return pop


# ------------------------------------------------------------------ q_exceedance

def test_q_at_threshold_is_half():
    th = KernelExpansion(0.3, [0.5], [2.0], [[0.4]])
    f = float(evaluate_expansion(th, np.array([[0.7]]))[0])
    assert predict.q_exceedance(th, 0.1, [0.7], f) == 0.5


def test_q_standard_normal_quantile():
    th = KernelExpansion(1.645)
    assert predict.q_exceedance(th, 1.0, [0.5], 0.0) == pytest.approx(0.95, abs=1e-4)
    assert predict.q_exceedance(th, 1.0, [0.5], 0.0) == pytest.approx(PHI_1645, abs=1e-15)


def test_q_small_sigma_limit():
    th = KernelExpansion(0.2)
    assert predict.q_exceedance(th, 1e-8, [0.5], 0.1) == 1.0


def test_q_rejects_nonpositive_sigma():
    with pytest.raises(InvalidParameterError):
        predict.q_exceedance(KernelExpansion(0.0), 0.0, [0.5], 0.0)


def test_normal_cdf_accuracy():
    z = np.linspace(-8, 8, 161)
    assert np.max(np.abs(predict.normal_cdf(z) - stats.norm.cdf(z))) < 1e-15
    assert predict.normal_cdf(-30.0) == pytest.approx(stats.norm.cdf(-30.0), rel=1e-12)


# ------------------------------------------------------------------ posterior q samples

def test_identical_particles_equal_q():
    pop = frozen([(0.4, [(0.3, 5.0, 0.5)])] * 6)
    s = predict.posterior_q_samples(pop, [0.5], 0.6, sigmas=np.full(6, 0.2))
    assert np.ptp(s[:, 1]) == 0
    assert s[:, 0].sum() == pytest.approx(1.0)


def test_q_samples_reproducible():
    pop = frozen([(0.4, []), (0.6, []), (0.5, [])])
    a = predict.posterior_q_samples(pop, [0.5], 0.5)
    b = predict.posterior_q_samples(pop, [0.5], 0.5)
    assert np.array_equal(a, b)


def test_q_samples_need_data():
    pop = smc.init_population(4, Hyperparameters(M=1, k_max=1), seed=0)
    with pytest.raises(InvalidParameterError):
        predict.posterior_q_samples(pop, [0.5], 0.0)


def _sigma_integrated_q(f, y0, sse, n, h):
    """E[Phi((f - y0) sqrt(lambda))] with lambda ~ Gamma(a + n/2, rate b + sse/2)."""
    shape, rate = h.a_noise + n / 2, h.b_noise + sse / 2
    dens = stats.gamma(shape, scale=1 / rate)
    val, _ = integrate.quad(lambda lam: dens.pdf(lam) * stats.norm.cdf((f - y0) * math.sqrt(lam)),
                            0, np.inf, limit=200)
    return val


def test_sigma_draws_match_quadrature():
    h = Hyperparameters(M=1, k_max=1)
    N = 20_000
    pop = frozen([(0.5, [])] * N, data=((0.5, 1.0),), hyper=h)
    q = predict.posterior_q_samples(pop, [0.5], 0.3)[:, 1]
    oracle = _sigma_integrated_q(0.5, 0.3, 0.25, 1, h)
    assert abs(q.mean() - oracle) < 3 * q.std() / math.sqrt(N)


def test_uniform_weights_plain_average():
    pop = frozen([(0.1, []), (0.4, []), (0.9, [])], data=((0.5, 0.5),))
    sig = np.array([0.2, 0.3, 0.4])
    q = predict.normal_cdf((np.array([0.1, 0.4, 0.9]) - 0.5) / sig)
    assert predict.posterior_mean_q(pop, [0.5], 0.5, sig) == pytest.approx(q.mean(), abs=1e-15)


# ------------------------------------------------------------------ posterior mean / variance

def test_mean_single_particle():
    pop = frozen([(0.7, [])])
    assert predict.posterior_mean_q(pop, [0.5], 0.5, np.array([0.1, 0.1])) == \
        pytest.approx(float(predict.normal_cdf(2.0)), abs=1e-15)


def test_mean_two_particles():
    z1, z2 = stats.norm.ppf([0.2, 0.4])
    pop = frozen([(z1, []), (z2, [])])
    assert predict.posterior_mean_q(pop, [0.5], 0.0, np.ones(2)) == pytest.approx(0.3, abs=1e-12)


def test_mean_matches_direct_integration():
    """Each of 3 particles is replicated so one call averages many sigma draws."""
    base = [(0.2, [(0.5, 4.0, 0.3)]), (0.6, []), (0.1, [(-0.4, 10.0, 0.8), (0.9, 2.0, 0.5)])]
    W = np.array([0.5, 0.3, 0.2])
    K = 200_000
    data = ((0.2, 0.5), (0.7, 0.4), (0.9, 0.1))
    pop = frozen([p for p in base for _ in range(K)], np.repeat(W / K, K), data=data)
    est = predict.posterior_mean_q(pop, [0.4], 0.45)

    rng = np.random.default_rng(0)
    h = pop.hyper
    direct = 0.0
    for i, (a0, kern) in enumerate(base):
        th = KernelExpansion(a0, [k[0] for k in kern], [k[1] for k in kern], [[k[2]] for k in kern])
        r = np.array([y for _, y in data]) - evaluate_expansion(th, np.array([[x] for x, _ in data]))
        lam = rng.gamma(h.a_noise + 1.5, 1 / (h.b_noise + r @ r / 2), size=1_000_000)
        direct += W[i] * predict.normal_cdf((evaluate_expansion(th, [0.4]) - 0.45) * np.sqrt(lam)).mean()
    assert est == pytest.approx(direct, abs=1e-3)


def test_variance_examples():
    same = frozen([(0.3, [])] * 4)
    assert predict.posterior_variance_q(same, [0.5], 0.1, np.full(4, 0.2)) == 0.0
    pop = frozen([(10.0, []), (-10.0, [])])
    assert predict.posterior_variance_q(pop, [0.5], 0.0, np.ones(2)) == pytest.approx(0.25, abs=1e-12)


def test_variance_matches_two_pass():
    rng = np.random.default_rng(3)
    parts = [(float(a), [(float(b), 3.0, 0.4)]) for a, b in rng.normal(size=(7, 2))]
    W = rng.dirichlet(np.ones(7))
    pop = frozen(parts, W)
    sig = rng.uniform(0.2, 1.0, 7)
    q = np.array([predict.q_exceedance(KernelExpansion(a, [k[0][0]], [k[0][1]], [[k[0][2]]]), s, [0.6], 0.2)
                  for (a, k), s in zip(parts, sig)])
    m = W @ q
    assert predict.posterior_variance_q(pop, [0.6], 0.2, sig) == pytest.approx(W @ (q - m) ** 2, abs=1e-12)


# ------------------------------------------------------------------ weighted quantiles

def test_quantile_examples():
    vals = np.arange(1, 101, dtype=float)
    assert predict.weighted_quantiles(vals, [0.5], np.ones(100))[0.5] == 50.0
    assert predict.weighted_quantiles([(1.0, 3.0)], [0.01, 0.5, 0.99]) == {0.01: 3.0, 0.5: 3.0, 0.99: 3.0}
    assert predict.weighted_quantiles([(0.99, 1.0), (0.01, 2.0)], [0.995])[0.995] == 2.0


def test_quantile_levels_validated():
    with pytest.raises(InvalidParameterError):
        predict.weighted_quantiles([(1.0, 1.0)], [0.5, 0.4])
    with pytest.raises(InvalidParameterError):
        predict.weighted_quantiles([(1.0, 1.0)], [0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 1.0), st.floats(-5, 5)), min_size=1, max_size=30),
       st.lists(st.floats(0.001, 0.999), min_size=1, max_size=5, unique=True))
def test_quantile_properties(pairs, levels):
    levels = sorted(levels)
    q = predict.weighted_quantiles(pairs, levels)
    vals = [q[float(p)] for p in levels]
    assert np.all(np.diff(vals) >= 0)
    w = np.array([p[0] for p in pairs])
    v = np.array([p[1] for p in pairs])
    for p, qv in zip(levels, vals):
        assert qv in v
        assert w[v <= qv].sum() / w.sum() >= p - 1e-9


# ------------------------------------------------------------------ event probability / cdf

def test_event_constant_q():
    pop = frozen([(0.5, [])] * 5)
    xs = predict.MarginalXSamples(np.linspace(0, 1, 11))
    r = predict.event_probability(pop, xs, 0.4, sigmas=np.full(5, 0.2))
    c = float(predict.normal_cdf(0.5))
    assert r.posterior_mean == pytest.approx(c, abs=1e-15)
    assert all(v == pytest.approx(c, abs=1e-15) for v in r.quantiles.values())
    assert r.variance == pytest.approx(0.0, abs=1e-24) and r.mc_se == pytest.approx(0.0, abs=1e-12)


def test_event_minus_infinity_threshold():
    pop = frozen([(0.5, []), (-3.0, [(1.0, 4.0, 0.2)])])
    r = predict.event_probability(pop, np.linspace(0, 1, 5), -np.inf)
    assert r.posterior_mean == 1.0


def test_event_single_particle_single_x_equals_q():
    th = (0.2, [(0.7, 6.0, 0.3)])
    pop = frozen([th])
    sig = predict.draw_sigmas(pop)
    r = predict.event_probability(pop, [[0.45]], 0.3, sigmas=sig)
    q = predict.q_exceedance(KernelExpansion(0.2, [0.7], [6.0], [[0.3]]), sig[0], [0.45], 0.3)
    assert r.posterior_mean == q


def test_event_keep_samples_and_bounds():
    rng = np.random.default_rng(0)
    parts = [(float(a), [(float(b), 5.0, 0.5)]) for a, b in rng.normal(size=(40, 2))]
    pop = frozen(parts)
    r = predict.event_probability(pop, np.linspace(0, 1, 30), 0.2, keep_samples=True)
    lo, hi = r.band()
    assert r.q_samples.shape == (40, 30)
    assert np.all((r.q_samples >= 0) & (r.q_samples <= 1))
    assert lo <= r.posterior_mean <= hi
    assert r.threshold == 0.2


def test_xsamples_validation():
    with pytest.raises(InvalidParameterError):
        predict.MarginalXSamples(np.zeros((0, 1)))
    with pytest.raises(InvalidParameterError):
        predict.MarginalXSamples([0.1, np.nan])
    w = predict.MarginalXSamples([0.1, 0.2], weights=[1, 3]).weights
    assert np.allclose(w, [0.25, 0.75])


def test_cdf_monotone_and_single_point():
    rng = np.random.default_rng(2)
    parts = [(float(a), [(float(b), 8.0, float(c))]) for a, b, c in rng.uniform(-1, 1, size=(30, 3))]
    pop = frozen(parts, data=((0.1, 0.2), (0.9, -0.3)))
    xs = np.linspace(0, 1, 20)
    grid = np.linspace(-3, 3, 25)
    curve = predict.cdf_curve(pop, xs, grid)
    means = np.array([c.posterior_mean for c in curve])
    assert np.all(np.diff(means) <= 1e-15) and np.all((means >= 0) & (means <= 1))
    one = predict.cdf_curve(pop, xs, [0.1])[0]
    ev = predict.event_probability(pop, xs, 0.1)
    assert one.posterior_mean == pytest.approx(ev.posterior_mean, abs=1e-15)
    assert one.quantiles == pytest.approx(ev.quantiles, abs=1e-15)


# ------------------------------------------------------------------ expectations

def test_expectation_of_one():
    pop = frozen([(0.3, []), (0.8, [(0.2, 3.0, 0.5)])])
    r = predict.expectation_of(pop, np.linspace(0, 1, 7), lambda v: np.ones_like(v))
    assert r.posterior_mean == pytest.approx(1.0, abs=1e-14)


def test_expectation_identity_closed_form():
    pop = frozen([(0.3, []), (0.8, [(0.2, 3.0, 0.5)]), (-0.1, [])], [0.2, 0.5, 0.3])
    xs = np.linspace(0, 1, 9)
    r = predict.expectation_of(pop, xs, "identity")
    F = pop.evaluate(xs[:, None])
    assert r.posterior_mean == pytest.approx(float(pop.weights() @ F.mean(axis=1)), abs=1e-15)


@pytest.mark.parametrize("nodes", [3, 5, 32])
def test_second_moment_identity(nodes):
    f, s = 0.7, 0.3
    assert predict.gaussian_expectation(lambda v: v ** 2, f, s, nodes) == pytest.approx(f * f + s * s, abs=1e-10)
    pop = frozen([(f, [])])
    r = predict.expectation_of(pop, [[0.5]], lambda v: v ** 2, nodes, sigmas=np.full(2, s))
    assert r.posterior_mean == pytest.approx(f * f + s * s, abs=1e-10)


def test_expectation_non_finite():
    pop = frozen([(0.3, [])])
    with pytest.raises(Exception):
        predict.expectation_of(pop, [[0.5]], lambda v: np.full_like(v, np.inf))


def test_smoothed_indicator_consistent_with_event():
    pop = frozen([(0.3, []), (0.8, [(0.2, 3.0, 0.5)])])
    sig = np.array([0.3, 0.4])
    xs = np.linspace(0, 1, 5)
    eps = 0.02
    r = predict.expectation_of(pop, xs, lambda v: predict.normal_cdf((v - 0.5) / eps), 150, sigmas=sig)
    ev = predict.event_probability(pop, xs, 0.5, sigmas=sig)
    assert r.posterior_mean == pytest.approx(ev.posterior_mean, abs=5e-3)


# ------------------------------------------------------------------ active learning

def test_scores_zero_for_concentrated_posterior():
    pop = frozen([(0.4, [(0.2, 5.0, 0.5)])] * 4)
    _, scores, _ = predict.active_learning_scores(pop, np.linspace(0, 1, 6), 0.3, sigmas=np.full(4, 0.1))
    assert np.all(scores == 0)


def test_scores_rank_wide_band_first():
    # particles agree at x=0 and disagree near x=1
    pop = frozen([(0.0, [(1.0, 50.0, 1.0)]), (0.0, [(-1.0, 50.0, 1.0)])])
    x_sorted, scores, order = predict.active_learning_scores(pop, [[0.0], [1.0]], 0.0, sigmas=np.full(2, 0.1))
    assert x_sorted[0, 0] == 1.0 and list(order) == [1, 0] and scores[0] > scores[1]
    _, v, _ = predict.active_learning_scores(pop, [[0.0], [1.0]], 0.0, method="variance", sigmas=np.full(2, 0.1))
    assert v[0] > v[1]


def test_scores_method_validated():
    pop = frozen([(0.0, [])])
    with pytest.raises(InvalidParameterError):
        predict.active_learning_scores(pop, [[0.5]], 0.0, method="entropy")


@pytest.mark.slow
def test_scores_decrease_after_labelling_top_x():
    solver = SyntheticSolverPair("m1")
    xs = solver.generate_x(200, seed=123)
    wins = 0
    for seed in range(10):
        X, y = solver.generate(15, seed=seed)
        est = ApproximateSolverRegressor(n_particles=200, random_state=seed, x_range=(0, 1)).fit(X, y)
        x_sorted, scores, order = est.active_learning_scores(xs, 1.2)
        top = x_sorted[:1]
        y_new = solver.exact(np.array([stats.norm.ppf(top[0, 0]), np.random.default_rng(seed).normal()]))
        est.partial_fit(top, [y_new])
        _, after, order2 = est.active_learning_scores(xs, 1.2)
        wins += after[np.argsort(order2)][order[0]] <= scores[0]
    assert wins >= 8


# ------------------------------------------------------------------ synthetic benchmark

@pytest.fixture(scope="module")
def fitted_m1():
    solver = SyntheticSolverPair("m1")
    X, y = solver.generate(60, seed=1)
    est = ApproximateSolverRegressor(n_particles=500, random_state=0, x_range=(0, 1)).fit(X, y)
    return solver, est


def test_cdf_at_oracle_median(fitted_m1):
    solver, est = fitted_m1
    _, y = solver.draw_batch(10 ** 6, np.random.default_rng(0))
    med = float(np.median(y))
    c = est.cdf(solver.generate_x(2000, seed=7), [med])[0]
    lo, hi = c.band()
    assert lo <= 0.5 <= hi
    assert c.posterior_mean == pytest.approx(0.5, abs=0.15)


def test_event_band_contains_brute_force(fitted_m1):
    solver, est = fitted_m1
    _, y = solver.draw_batch(10 ** 6, np.random.default_rng(1))
    truth = float(np.mean(y > 1.2))
    r = est.exceedance_probability(solver.generate_x(2000, seed=8), 1.2)
    lo, hi = r.band()
    assert lo <= truth <= hi and lo <= r.posterior_mean <= hi


# ------------------------------------------------------------------ output standardization

def test_standardized_population_matches_raw():
    shift, scale = 3.0, 0.01
    parts = [(0.2, [(0.5, 4.0, 0.3)]), (-0.4, [(0.3, 9.0, 0.7)])]
    data = ((0.3, 0.5), (0.8, -0.2))
    raw = frozen([(shift + scale * a, [(scale * b, t, c) for b, t, c in k]) for a, k in parts],
                 data=[(x, shift + scale * y) for x, y in data])
    std = frozen(parts, data=data, meta={"y_shift": shift, "y_scale": scale})
    sig = np.array([0.1, 0.2])
    xs = np.linspace(0, 1, 7)
    y0 = shift + scale * 0.1
    a = predict.event_probability(raw, xs, y0, sigmas=scale * sig)
    b = predict.event_probability(std, xs, y0, sigmas=sig)
    assert a.posterior_mean == pytest.approx(b.posterior_mean, abs=1e-12)
    for h in ("identity", lambda v: v ** 2):
        ea = predict.expectation_of(raw, xs, h, sigmas=scale * sig)
        eb = predict.expectation_of(std, xs, h, sigmas=sig)
        assert ea.posterior_mean == pytest.approx(eb.posterior_mean, rel=1e-10)
    assert predict.to_model_y(std, y0) == pytest.approx(0.1)
