"""Posterior statistics of the exact output from a particle population.

For a particle (theta, sigma) the exact output given predictors x is
Normal(f(x; theta), sigma^2), so the conditional exceedance probability is

    q(x; theta, sigma) = Phi((f(x; theta) - y0) / sigma).

Means, weighted quantiles and variances of q over the population describe
the posterior uncertainty; averaging them over draws from the predictor
distribution pi_x gives event probabilities with credible bounds.

One noise draw sigma_i per particle is taken from its conditional posterior
with a substream fixed by the population state, and reused across every x
and threshold of a call so that curves are coherent and reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import erfc

from .errors import InvalidParameterError, NumericalError
from .model import KernelExpansion, evaluate_expansion
from .smc import Population, substream

DEFAULT_LEVELS = (0.01, 0.99)
GH_NODES_DEFAULT = 32
_TAG_SIGMA = 5
_QUANTILE_SLACK = 1e-12
_CHUNK = 1024


def normal_cdf(z):
    """Standard normal CDF through the complementary error function."""
    return 0.5 * erfc(-np.asarray(z, dtype=np.float64) / math.sqrt(2.0))


def q_exceedance(theta: KernelExpansion, sigma: float, x, y0: float):
    """Pr[y > y0 | x, theta, sigma] = Phi((f(x; theta) - y0) / sigma)."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    return normal_cdf((evaluate_expansion(theta, x) - y0) / sigma)


@dataclass
class MarginalXSamples:
    """Draws representing the predictor distribution pi_x (raw units).

    ``weights`` default to 1/S each; user weights are normalized.
    """

    samples: np.ndarray
    weights: np.ndarray | None = None
    provenance: str = "monte-carlo"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] == 0:
            raise InvalidParameterError("at least one x sample is required")
        if not np.all(np.isfinite(s)):
            raise InvalidParameterError("x samples must be finite")
        self.samples = s
        if self.weights is None:
            self.weights = np.full(len(s), 1.0 / len(s))
        else:
            w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if len(w) != len(s) or np.any(w < 0) or not w.sum() > 0:
                raise InvalidParameterError("x-sample weights must be nonnegative and match the samples")
            self.weights = w / w.sum()

    def __len__(self):
        return len(self.samples)


@dataclass
class PredictionSummary:
    """Posterior summary of a probability or expectation.

    ``quantiles`` maps level -> value; ``mc_se`` is the Monte Carlo error
    over x samples, distinct from the posterior credible width.
    """

    posterior_mean: float
    quantiles: dict
    variance: float
    mc_se: float = 0.0
    threshold: float | None = None
    q_samples: np.ndarray | None = field(default=None, repr=False)

    def band(self, low=DEFAULT_LEVELS[0], high=DEFAULT_LEVELS[1]):
        return self.quantiles[low], self.quantiles[high]


def _check_levels(levels) -> np.ndarray:
    lv = np.atleast_1d(np.asarray(levels, dtype=np.float64))
    if np.any((lv <= 0) | (lv >= 1)):
        raise InvalidParameterError("quantile levels must lie in (0, 1)")
    if np.any(np.diff(lv) <= 0):
        raise InvalidParameterError("quantile levels must be strictly increasing")
    return lv


def weighted_quantiles(samples, levels, weights=None) -> dict:
    """Right-continuous weighted empirical quantiles.

    ``samples`` is either a sequence of ``(weight, value)`` pairs or, with
    ``weights`` given, an array of values. The quantile at p is the smallest
    value whose cumulative normalized weight reaches p.
    """
    if weights is None:
        arr = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
        weights, values = arr[:, 0], arr[:, 1]
    else:
        values = np.asarray(samples, dtype=np.float64).reshape(-1)
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    lv = _check_levels(levels)
    q = _column_quantiles(values[:, None], weights, lv)[:, 0]
    return {float(p): float(v) for p, v in zip(lv, q)}


def _column_quantiles(Q: np.ndarray, W: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Weighted quantiles of every column of Q (rows are particles); shape (L, S)."""
    if not W.sum() > 0 or np.any(W < 0):
        raise NumericalError("weights cannot be normalized")
    W = W / W.sum()
    order = np.argsort(Q, axis=0, kind="stable")
    Qs = np.take_along_axis(Q, order, axis=0)
    C = np.cumsum(W[order], axis=0)
    out = np.empty((len(levels), Q.shape[1]))
    last = Q.shape[0] - 1
    for j, p in enumerate(levels):
        hit = C >= p - _QUANTILE_SLACK
        idx = np.where(hit.any(axis=0), hit.argmax(axis=0), last)
        out[j] = Qs[idx, np.arange(Q.shape[1])]
    return out


def draw_sigmas(population: Population, seed: int | None = None) -> np.ndarray:
    """One noise standard deviation per particle from its conditional posterior."""
    if population.n_assimilated < 1:
        raise InvalidParameterError("the population has not assimilated any data")
    h = population.hyper
    n = population.n_assimilated
    sse = population.sse if not population.has_next else _sse_assimilated(population)
    rng = substream(population.seed if seed is None else seed, population.counter, _TAG_SIGMA)
    shape = h.a_noise + 0.5 * n
    rate = h.b_noise + 0.5 * sse
    precision = rng.gamma(shape, 1.0, size=population.N) / rate
    return 1.0 / np.sqrt(precision)


def _sse_assimilated(population: Population) -> np.ndarray:
    n = population.n_assimilated
    r = population._Y[:n][None, :] - population.fvals[:, :n]
    return np.einsum("ij,ij->i", r, r)


def to_unit_cube(population: Population, x) -> tuple[np.ndarray, np.ndarray]:
    """Raw predictors -> rescaled, clamped points plus extrapolation flags.

    Uses the rescaling stored in ``population.meta``; without one, x is
    taken as already rescaled (and still clamped).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, population.M)
    if x.shape[1] != population.M:
        raise InvalidParameterError(f"expected {population.M} predictor column(s), got {x.shape[1]}")
    lo = population.meta.get("x_min")
    hi = population.meta.get("x_max")
    z = x if lo is None else (x - np.asarray(lo)) / (np.asarray(hi) - np.asarray(lo))
    outside = np.any((z < 0) | (z > 1), axis=1)
    return np.clip(z, 0.0, 1.0), outside


def _y_units(population: Population):
    """(shift, scale) mapping model units to raw outputs: y = shift + scale * y_model."""
    return float(population.meta.get("y_shift", 0.0)), float(population.meta.get("y_scale", 1.0))


def to_model_y(population: Population, y):
    shift, scale = _y_units(population)
    return (np.asarray(y, dtype=np.float64) - shift) / scale


def _raw_h(population: Population, h):
    """Compose a test function of raw y with the output standardization."""
    shift, scale = _y_units(population)
    if shift == 0.0 and scale == 1.0:
        return h
    if isinstance(h, str):
        if h != "identity":
            raise InvalidParameterError(f"unknown closed-form function {h!r}")
        return ("affine", scale, shift)
    if isinstance(h, tuple) and h and h[0] == "affine":
        return ("affine", h[1] * scale, h[1] * shift + h[2])
    return lambda v: h(shift + scale * v)


def _xs(population, xsamples) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(xsamples, MarginalXSamples):
        xsamples = MarginalXSamples(xsamples)
    z, _ = to_unit_cube(population, xsamples.samples)
    return z, xsamples.weights


def posterior_q_samples(population: Population, x, y0: float, sigmas=None) -> np.ndarray:
    """(weight, q) per particle for a single raw query x; shape (N, 2)."""
    z, _ = to_unit_cube(population, np.asarray(x, dtype=np.float64).reshape(1, -1))
    sigmas = draw_sigmas(population) if sigmas is None else sigmas
    f = population.evaluate(z)[:, 0]
    return np.column_stack([population.weights(), normal_cdf((f - to_model_y(population, y0)) / sigmas)])


def posterior_mean_q(population: Population, x, y0: float, sigmas=None) -> float:
    s = posterior_q_samples(population, x, y0, sigmas)
    return float(s[:, 0] @ s[:, 1])


def posterior_variance_q(population: Population, x, y0: float, sigmas=None) -> float:
    s = posterior_q_samples(population, x, y0, sigmas)
    m = float(s[:, 0] @ s[:, 1])
    return float(s[:, 0] @ (s[:, 1] - m) ** 2)


def _aggregate(Qfun: Callable[[np.ndarray], np.ndarray], population: Population, z: np.ndarray,
               xw: np.ndarray, levels: np.ndarray, keep: bool, threshold=None) -> PredictionSummary:
    """Average per-x posterior means and quantiles over x samples.

    ``Qfun`` maps f-values of shape (N, s) to q-values of the same shape.
    """
    W = population.weights()
    S = len(z)
    mean_x = np.empty(S)
    quant = np.zeros(len(levels))
    per_particle = np.zeros(population.N)
    kept = [] if keep else None
    for start in range(0, S, _CHUNK):
        sl = slice(start, min(S, start + _CHUNK))
        Q = Qfun(population.evaluate(z[sl]))
        if not np.all(np.isfinite(Q)):
            raise NumericalError("non-finite conditional quantity")
        mean_x[sl] = W @ Q
        quant += _column_quantiles(Q, W, levels) @ xw[sl]
        per_particle += Q @ xw[sl]
        if keep:
            kept.append(Q)
    mean = float(xw @ mean_x)
    variance = float(W @ (per_particle - mean) ** 2)
    mc_var = float(xw @ (mean_x - mean) ** 2)
    mc_se = math.sqrt(mc_var * float(xw @ xw))
    return PredictionSummary(mean, {float(p): float(v) for p, v in zip(levels, quant)}, variance,
                             mc_se, threshold, np.hstack(kept) if keep else None)


def event_probability(population: Population, xsamples, y0: float, levels=DEFAULT_LEVELS,
                      sigmas=None, keep_samples: bool = False) -> PredictionSummary:
    """Pr[y > y0] integrated over pi_x, with averaged per-x credible bounds."""
    lv = _check_levels(levels)
    z, xw = _xs(population, xsamples)
    sigmas = draw_sigmas(population) if sigmas is None else np.asarray(sigmas)
    s = sigmas[:, None]
    t = float(to_model_y(population, y0))
    return _aggregate(lambda F: normal_cdf((F - t) / s), population, z, xw, lv, keep_samples, float(y0))


def cdf_curve(population: Population, xsamples, y0_grid: Sequence[float], levels=DEFAULT_LEVELS,
              sigmas=None) -> list[PredictionSummary]:
    """Exceedance curve over thresholds; the sigma draws are shared by every threshold."""
    lv = _check_levels(levels)
    z, xw = _xs(population, xsamples)
    sigmas = draw_sigmas(population) if sigmas is None else np.asarray(sigmas)
    s = sigmas[:, None]
    W = population.weights()
    grid = np.asarray(y0_grid, dtype=np.float64).reshape(-1)
    G, S = len(grid), len(z)
    mean_x = np.zeros((G, S))
    quant = np.zeros((G, len(lv)))
    per_particle = np.zeros((G, population.N))
    for start in range(0, S, _CHUNK):
        sl = slice(start, min(S, start + _CHUNK))
        F = population.evaluate(z[sl])
        for g, t in enumerate(to_model_y(population, grid)):
            Q = normal_cdf((F - t) / s)
            mean_x[g, sl] = W @ Q
            quant[g] += _column_quantiles(Q, W, lv) @ xw[sl]
            per_particle[g] += Q @ xw[sl]
    out = []
    for g, y0 in enumerate(grid):
        mean = float(xw @ mean_x[g])
        variance = float(W @ (per_particle[g] - mean) ** 2)
        mc_se = math.sqrt(float(xw @ (mean_x[g] - mean) ** 2) * float(xw @ xw))
        out.append(PredictionSummary(mean, {float(p): float(v) for p, v in zip(lv, quant[g])},
                                     variance, mc_se, float(y0)))
    return out


def gaussian_expectation(h, mean, sigma, quad_points: int = GH_NODES_DEFAULT):
    """E[h(Y)] for Y ~ Normal(mean, sigma^2), elementwise over broadcast arrays.

    ``h`` may be a callable, ``"identity"``, or ``("affine", slope, offset)``;
    the last two use the closed form.
    """
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if isinstance(h, str):
        if h != "identity":
            raise InvalidParameterError(f"unknown closed-form function {h!r}")
        return mean + 0.0 * sigma
    if isinstance(h, tuple) and h and h[0] == "affine":
        return h[1] * mean + h[2] + 0.0 * sigma
    if int(quad_points) < 1:
        raise InvalidParameterError("quad_points must be >= 1")
    t, w = hermgauss(int(quad_points))
    w = w / math.sqrt(math.pi)
    out = np.zeros(np.broadcast(mean, sigma).shape)
    for tj, wj in zip(t, w):
        out = out + wj * np.asarray(h(mean + math.sqrt(2.0) * sigma * tj), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite quadrature value")
    return out


def expectation_of(population: Population, xsamples, h, quad_points: int = GH_NODES_DEFAULT,
                   levels=DEFAULT_LEVELS, sigmas=None) -> PredictionSummary:
    """Posterior summary of E[h(y)] integrated over pi_x."""
    lv = _check_levels(levels)
    z, xw = _xs(population, xsamples)
    sigmas = draw_sigmas(population) if sigmas is None else np.asarray(sigmas)
    s = sigmas[:, None]
    hm = _raw_h(population, h)
    return _aggregate(lambda F: gaussian_expectation(hm, F, s, quad_points), population, z, xw, lv, False)


def active_learning_scores(population: Population, xsamples, y0: float, p_low: float = 0.01,
                           p_high: float = 0.99, method: str = "quantile_gap", sigmas=None):
    """Rank x samples by posterior spread of q(x).

    ``method`` is ``"quantile_gap"`` (q_{p_high} - q_{p_low}) or
    ``"variance"``. Each score is multiplied by the sample's pi_x weight
    relative to 1/S, so equal-weight samples score by spread alone.

    Returns
    -------
    x_sorted, scores_sorted, order
        Raw x samples and scores in descending score order, and the
        permutation applied.
    """
    if not isinstance(xsamples, MarginalXSamples):
        xsamples = MarginalXSamples(xsamples)
    if method not in ("quantile_gap", "variance"):
        raise InvalidParameterError(f"unknown scoring method {method!r}")
    lv = _check_levels([p_low, p_high])
    z, xw = _xs(population, xsamples)
    sigmas = draw_sigmas(population) if sigmas is None else np.asarray(sigmas)
    W = population.weights()
    S = len(z)
    scores = np.empty(S)
    y0 = float(to_model_y(population, y0))
    for start in range(0, S, _CHUNK):
        sl = slice(start, min(S, start + _CHUNK))
        Q = normal_cdf((population.evaluate(z[sl]) - y0) / sigmas[:, None])
        if method == "quantile_gap":
            qq = _column_quantiles(Q, W, lv)
            scores[sl] = qq[1] - qq[0]
        else:
            m = W @ Q
            scores[sl] = W @ (Q - m) ** 2
    scores *= xw * S
    order = np.argsort(-scores, kind="stable")
    return xsamples.samples[order], scores[order], order
