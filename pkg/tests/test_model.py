import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from approxuq.errors import DegenerateDimensionError, InvalidParameterError
from approxuq.model import (Hyperparameters, KernelExpansion, MinMaxRescaler, TrainingSet,
                            evaluate_expansion, log_marginal_likelihood, log_prior, log_scale_prior,
                            log_tempered_likelihood, noise_precision_posterior, rescale_apply,
                            rescale_fit, sample_noise_variance, sample_scale_prior, scale_prior_ppf)

from . import oracles

HYPER = Hyperparameters(M=1)


def kernel(a0=0.0, amps=(), taus=(), centers=()):
    c = np.array(centers, dtype=float)
    return KernelExpansion(a0, list(amps), list(taus), c.reshape(len(amps), -1) if len(amps) else np.zeros((0, 1)))


def test_oracles_recompute():
    mp.mp.dps = 30
    assert float(mp.log(0.5) - mp.log(2 * mp.pi) / 2 + mp.log(mp.sqrt(mp.pi) / 2)) == pytest.approx(
        oracles.LOG_PRIOR_K0, rel=1e-15)
    assert float(mp.loggamma(2.75) - 2.75 * mp.log(mp.mpf("1e-6") + mp.mpf("0.0425"))) == pytest.approx(
        oracles.LOG_TEMPERED, rel=1e-15)
    assert float(mp.loggamma(3) - 3 * mp.log(mp.mpf("1e-6") + mp.mpf("0.025"))) == pytest.approx(
        oracles.LOG_ML_TWO, rel=1e-15)
    assert float(64 / mp.sqrt(2)) == pytest.approx(oracles.SPLIT_JACOBIAN_HALF, rel=1e-15)
    assert float(mp.ncdf(1.645)) == pytest.approx(oracles.PHI_1645, rel=1e-15)


# ------------------------------------------------------------------ evaluation

def test_evaluate_constant():
    assert evaluate_expansion(kernel(3.5), [0.3]) == 3.5


def test_evaluate_at_center():
    assert evaluate_expansion(kernel(0.0, [2.0], [7.3], [[0.4]]), [0.4]) == 2.0


def test_evaluate_unit_distance():
    theta = kernel(1.0, [2.0], [1.0], [[0.0, 0.0]])
    assert evaluate_expansion(theta, [1.0, 0.0]) == pytest.approx(oracles.KERNEL_UNIT_DISTANCE, rel=1e-15)


def test_evaluate_vectorized_matches_pointwise():
    rng = np.random.default_rng(0)
    theta = kernel(0.3, rng.normal(size=4), rng.uniform(1, 50, 4), rng.random((4, 2)))
    X = rng.random((7, 2))
    batch = evaluate_expansion(theta, X)
    assert np.allclose(batch, [evaluate_expansion(theta, x) for x in X], rtol=0, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(lam=st.floats(-5, 5), seed=st.integers(0, 10_000))
def test_evaluate_linear_in_amplitudes(lam, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, 5))
    theta = kernel(rng.normal(), rng.normal(size=k), rng.uniform(0.5, 30, k), rng.random((k, 1)))
    scaled = kernel(lam * theta.intercept, lam * theta.amplitudes, theta.scales, theta.centers)
    x = rng.random(1)
    assert evaluate_expansion(scaled, x) == pytest.approx(lam * evaluate_expansion(theta, x), abs=1e-12)


def test_expansion_length_mismatch():
    with pytest.raises(InvalidParameterError):
        KernelExpansion(0.0, [1.0, 2.0], [1.0], [[0.5]])


# ------------------------------------------------------------------ prior

def test_log_prior_empty_expansion():
    assert log_prior(kernel(0.0), HYPER) == pytest.approx(oracles.LOG_PRIOR_K0, rel=1e-14)


def test_log_prior_intercept_ratio():
    diff = log_prior(kernel(0.0), HYPER) - log_prior(kernel(2.0), HYPER)
    assert diff == pytest.approx(oracles.LOG_PRIOR_RATIO_A0_2, rel=1e-14)


def test_log_prior_off_support():
    assert log_prior(kernel(0.0, [1.0], [-1.0], [[0.5]]), HYPER) == -math.inf
    assert log_prior(kernel(0.0, [1.0], [1.0], [[1.5]]), HYPER) == -math.inf


def test_log_prior_k_above_kmax():
    h = Hyperparameters(M=1, k_max=1)
    with pytest.raises(InvalidParameterError):
        log_prior(kernel(0.0, [1, 1], [1, 1], [[0.1], [0.2]]), h)


@pytest.mark.parametrize("a_tau,a_mu", [(1.0, 0.01), (2.5, 0.3), (0.7, 1.0)])
def test_scale_prior_normalized(a_tau, a_mu):
    # substitute tau = t / (1 - t) to integrate over (0, inf)
    def f(t):
        tau = t / (1 - t)
        return math.exp(log_scale_prior(tau, a_tau, a_mu)) / (1 - t) ** 2

    total, _ = integrate.quad(f, 0, 1, limit=400, points=[1e-6, 1e-3, 0.5])
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("a_tau,a_mu", [(1.0, 0.01), (2.5, 0.3)])
def test_scale_prior_sampling_routes_agree(a_tau, a_mu):
    rng = np.random.default_rng(4)
    hier = sample_scale_prior(rng, 100_000, a_tau, a_mu)
    inv = scale_prior_ppf(rng.random(100_000), a_tau, a_mu)
    # both against the closed-form CDF (a_tau a_mu tau ~ BetaPrime(a_tau, 1))
    cdf = stats.betaprime(a_tau, 1).cdf
    assert stats.kstest(a_tau * a_mu * hier, cdf).pvalue > 1e-3
    assert stats.kstest(a_tau * a_mu * inv, cdf).pvalue > 1e-3


def test_cardinality_prior_gives_unnormalized_geometric():
    lp = [log_prior(kernel(0.0, [0.0] * k, [1.0] * k, [[0.5]] * k), HYPER) for k in range(4)]
    # amplitudes at zero add a k-dependent factor; strip it to isolate (s+1)^-(k+1)
    from approxuq.model import log_amplitude_prior
    card = [lp[k] - log_amplitude_prior(np.zeros(k + 1), 1.0, 1.0)
            - k * log_scale_prior(1.0, 1.0, 0.01) for k in range(4)]
    assert np.allclose(np.diff(card), -math.log(2.0), atol=1e-13)


# ------------------------------------------------------------------ likelihood

def test_log_ml_empty():
    assert log_marginal_likelihood(kernel(0.3), TrainingSet.empty(1), HYPER) == pytest.approx(
        oracles.LOG_ML_EMPTY, rel=1e-14)


def test_log_ml_interpolation():
    x = np.array([[0.1], [0.2], [0.3], [0.4]])
    data = TrainingSet(x, np.full(4, 0.7))
    assert log_marginal_likelihood(kernel(0.7), data, HYPER) == pytest.approx(oracles.LOG_ML_INTERP, rel=1e-14)


def test_log_ml_two_residuals():
    data = TrainingSet(np.array([[0.1], [0.9]]), np.array([0.1, -0.2]))
    assert log_marginal_likelihood(kernel(0.0), data, HYPER) == pytest.approx(oracles.LOG_ML_TWO, rel=1e-14)


def test_log_tempered_example():
    data = TrainingSet(np.array([[0.5]]), np.array([0.2]))  # SSE 0.04
    val = log_tempered_likelihood(kernel(0.0), data, ([0.5], 0.3), 0.5, HYPER)  # r^2 0.09
    assert val == pytest.approx(oracles.LOG_TEMPERED, rel=1e-14)


def test_log_tempered_gamma_range():
    with pytest.raises(InvalidParameterError):
        log_tempered_likelihood(kernel(0.0), TrainingSet.empty(1), ([0.5], 0.3), 1.2, HYPER)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_tempered_endpoints(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, 4))
    theta = kernel(rng.normal(), rng.normal(size=k), rng.uniform(0.5, 40, k), rng.random((k, 1)))
    n = int(rng.integers(0, 6))
    data = TrainingSet(rng.random((n, 1)), rng.normal(size=n))
    nxt = (rng.random(1), float(rng.normal()))
    full = TrainingSet(np.vstack([data.x, nxt[0][None, :]]), np.append(data.y, nxt[1]))
    assert log_tempered_likelihood(theta, data, nxt, 0.0, HYPER) == pytest.approx(
        log_marginal_likelihood(theta, data, HYPER), rel=1e-12, abs=1e-12)
    assert log_tempered_likelihood(theta, data, nxt, 1.0, HYPER) == pytest.approx(
        log_marginal_likelihood(theta, full, HYPER), rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_tempered_continuous_in_gamma(seed):
    rng = np.random.default_rng(seed)
    data = TrainingSet(rng.random((3, 1)), rng.normal(size=3))
    nxt = (rng.random(1), float(rng.normal()))

    def jump(m):
        g = np.linspace(0, 1, m)
        return np.abs(np.diff([log_tempered_likelihood(kernel(0.1), data, nxt, v, HYPER) for v in g])).max()

    # increments shrink in proportion to the grid spacing
    assert jump(201) < 0.6 * jump(101)


def test_marginal_likelihood_decreases_with_sse():
    data = TrainingSet(np.array([[0.5], [0.6]]), np.array([1.0, 1.0]))
    vals = [log_marginal_likelihood(kernel(c), data, HYPER) for c in (1.0, 0.9, 0.5, 0.0)]
    assert np.all(np.diff(vals) < 0)


# ------------------------------------------------------------------ noise posterior

def test_noise_prior_recovery():
    h = Hyperparameters(M=1, a_noise=2.0, b_noise=0.5)
    rng = np.random.default_rng(1)
    prec = np.array([1.0 / sample_noise_variance(kernel(0.0), TrainingSet.empty(1), h, rng)
                     for _ in range(100_000)])
    se = prec.std() / math.sqrt(len(prec))
    assert abs(prec.mean() - 2.0 / 0.5) < 3 * se


def test_noise_posterior_zero_residuals():
    shape, rate = noise_precision_posterior(0.0, 10, HYPER)
    assert shape == 7.0 and rate == HYPER.b_noise


def test_noise_posterior_mean_sse2():
    data = TrainingSet(np.array([[0.2], [0.8]]), np.array([1.0, -1.0]))  # SSE = 2 around 0
    shape, rate = noise_precision_posterior(2.0, 2, HYPER)
    assert (shape, rate) == (3.0, HYPER.b_noise + 1.0)
    rng = np.random.default_rng(2)
    prec = rng.gamma(shape, 1.0 / rate, size=1_000_000)
    assert abs(prec.mean() - oracles.PRECISION_MEAN_SSE2) < 3 * prec.std() / 1000
    one = 1.0 / sample_noise_variance(kernel(0.0), data, HYPER, np.random.default_rng(3))
    assert one > 0


# ------------------------------------------------------------------ rescaling

def test_rescale_examples():
    ts = rescale_fit([2.0, 4.0, 6.0], [0.0, 0.0, 0.0])
    assert np.allclose(ts.x.ravel(), [0, 0.5, 1])
    z, flag = rescale_apply(ts.rescaler, [5.0])
    assert z[0, 0] == 0.75 and not flag[0]
    z, flag = rescale_apply(ts.rescaler, [8.0])
    assert z[0, 0] == 1.0 and flag[0]


def test_rescale_inverse():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 3))
    r = MinMaxRescaler().fit(X)
    assert np.allclose(r.inverse_transform(r.transform(X)), X, atol=1e-12)


def test_rescale_widens_constant_dimension():
    r = MinMaxRescaler().fit(np.array([[1.0], [1.0]]))
    z, _ = r.transform_with_flags(np.array([[1.0]]))
    assert z[0, 0] == pytest.approx(0.5, abs=1e-3)  # 1e-12 widening is near float spacing at 1.0


def test_rescale_degenerate_after_widening():
    with pytest.raises(DegenerateDimensionError):
        MinMaxRescaler().fit(np.array([[1e10], [1e10]]))


def test_rescale_clamp_warns():
    r = MinMaxRescaler().fit(np.array([[0.0], [1.0]]))
    with pytest.warns(UserWarning):
        r.transform(np.array([[2.0]]))


def test_hyperparameter_validation():
    with pytest.raises(InvalidParameterError):
        Hyperparameters(M=1, s=-1.0)
    with pytest.raises(InvalidParameterError):
        Hyperparameters(M=0)
