"""Kernel-expansion regression model.

The regression mean is

    f(x; theta) = a0 + sum_j a_j * exp(-tau_j * ||x - nu_j||^2)

with a variable number ``k`` of isotropic Gaussian kernels on the unit cube.
This module holds the parameter containers, the composite prior, the
noise-marginalized likelihood (and its tempered bridge), the conditional
noise posterior and the min-max rescaling of predictors.

All likelihoods omit the Gaussian constant ``(2*pi)**(-n/2)``; it cancels in
every importance and Metropolis-Hastings ratio, so absolute evidence values
reported from this module are unnormalized.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import gammaln
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DegenerateDimensionError, InvalidParameterError

LOG_2PI = math.log(2.0 * math.pi)
RESCALE_MARGIN = 1e-12


@dataclass
class Hyperparameters:
    """Prior constants. Defaults are the values used for the cohesive example."""

    s: float = 1.0
    a_tau: float = 1.0
    a_mu: float = 0.01
    a0_amp: float = 1.0
    b0_amp: float = 1.0
    a_noise: float = 2.0
    b_noise: float = 1e-6
    k_max: int = 100
    M: int = 1

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "k_max":
                if int(value) != value or value < 0:
                    raise InvalidParameterError(f"k_max must be a nonnegative integer, got {value}")
            elif f.name == "M":
                if int(value) != value or value < 1:
                    raise InvalidParameterError(f"M must be a positive integer, got {value}")
            elif not (np.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{f.name} must be positive, got {value}")
        self.k_max = int(self.k_max)
        self.M = int(self.M)

    def as_array(self) -> np.ndarray:
        """Pack into the float vector layout used by the compiled kernels."""
        return np.array(
            [self.s, self.a_tau, self.a_mu, self.a0_amp, self.b0_amp,
             self.a_noise, self.b_noise, float(self.k_max), float(self.M)],
            dtype=np.float64,
        )


@dataclass
class KernelExpansion:
    """One parameter vector theta = (k, a0, {a_j, tau_j, nu_j})."""

    intercept: float = 0.0
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scales: np.ndarray = field(default_factory=lambda: np.zeros(0))
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))

    def __post_init__(self):
        self.intercept = float(self.intercept)
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64).reshape(-1)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(-1)
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.ndim == 1:
            centers = centers.reshape(len(self.amplitudes), -1) if len(self.amplitudes) else centers.reshape(0, max(1, centers.size))
        self.centers = centers
        if not (len(self.amplitudes) == len(self.scales) == self.centers.shape[0]):
            raise InvalidParameterError(
                "amplitudes, scales and centers must have equal length "
                f"({len(self.amplitudes)}, {len(self.scales)}, {self.centers.shape[0]})"
            )

    @property
    def k(self) -> int:
        return len(self.amplitudes)

    @property
    def M(self) -> int:
        return self.centers.shape[1]

    def copy(self) -> "KernelExpansion":
        return KernelExpansion(self.intercept, self.amplitudes.copy(),
                               self.scales.copy(), self.centers.copy())

    def in_support(self, k_max: int | None = None) -> bool:
        if k_max is not None and self.k > k_max:
            return False
        return bool(np.all(self.scales > 0)
                    and np.all((self.centers >= 0.0) & (self.centers <= 1.0)))

    def check(self, k_max: int | None = None):
        """Raise if any structural invariant is violated."""
        if not self.in_support(k_max):
            raise InvalidParameterError(f"kernel expansion outside prior support: {self}")

    def __eq__(self, other):
        if not isinstance(other, KernelExpansion):
            return NotImplemented
        return (self.intercept == other.intercept
                and np.array_equal(self.amplitudes, other.amplitudes)
                and np.array_equal(self.scales, other.scales)
                and np.array_equal(self.centers, other.centers))


def evaluate_expansion(theta: KernelExpansion, x) -> np.ndarray | float:
    """Evaluate f(x; theta) at one point (shape (M,)) or many (shape (n, M))."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    pts = x.reshape(1, -1) if single else x
    out = np.full(pts.shape[0], theta.intercept)
    if theta.k:
        d2 = ((pts[:, None, :] - theta.centers[None, :, :]) ** 2).sum(axis=-1)
        out += np.exp(-d2 * theta.scales[None, :]) @ theta.amplitudes
    return float(out[0]) if single else out


def log_scale_prior(tau, a_tau: float, a_mu: float):
    """Log density of one kernel precision after integrating out its Gamma rate.

    Equivalent to ``a_tau * a_mu * tau ~ BetaPrime(a_tau, 1)``.
    """
    tau = np.asarray(tau, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ((a_tau + 1.0) * math.log(a_tau)
               + (a_tau - 1.0) * np.log(tau) - math.log(a_mu)
               - (a_tau + 1.0) * np.log(a_tau * tau + 1.0 / a_mu))
    out = np.where(tau > 0, out, -np.inf)
    return float(out) if out.ndim == 0 else out


def sample_scale_prior(rng: np.random.Generator, size, a_tau: float, a_mu: float):
    """Draw tau hierarchically: mu ~ Exp(mean a_mu), tau | mu ~ Gamma(a_tau, rate mu * a_tau)."""
    mu = rng.exponential(a_mu, size=size)
    return rng.gamma(a_tau, 1.0 / (mu * a_tau), size=size)


def scale_prior_ppf(u, a_tau: float, a_mu: float):
    """Inverse CDF of the marginal precision prior."""
    v = np.asarray(u, dtype=np.float64) ** (1.0 / a_tau)
    return v / (1.0 - v) / (a_tau * a_mu)


def log_cardinality_prior(k, s: float):
    """Unnormalized log p(k) = -(k+1) log(s+1)."""
    return -(np.asarray(k) + 1.0) * math.log(s + 1.0)


def log_amplitude_prior(amplitudes_with_intercept, a0_amp: float, b0_amp: float) -> float:
    a = np.asarray(amplitudes_with_intercept, dtype=np.float64)
    m = a.size
    shape = a0_amp + 0.5 * m
    return float(-0.5 * m * LOG_2PI + gammaln(shape) - shape * math.log(b0_amp + 0.5 * np.dot(a, a)))


def log_prior(theta: KernelExpansion, hyper: Hyperparameters) -> float:
    """Log of the composite prior (cardinality x scales x amplitudes x uniform centers)."""
    if theta.k > hyper.k_max:
        raise InvalidParameterError(f"k={theta.k} exceeds k_max={hyper.k_max}")
    if not theta.in_support():
        return -math.inf
    lp = float(log_cardinality_prior(theta.k, hyper.s))
    if theta.k:
        lp += float(np.sum(log_scale_prior(theta.scales, hyper.a_tau, hyper.a_mu)))
    lp += log_amplitude_prior(np.concatenate([[theta.intercept], theta.amplitudes]),
                              hyper.a0_amp, hyper.b0_amp)
    return lp


def log_likelihood_from_sse(sse, n, hyper: Hyperparameters, gamma=0.0, next_sq_residual=0.0):
    """Tempered marginal likelihood from sufficient statistics.

    ``b + (sse + gamma * r^2) / 2`` is used so that gamma = 0 and gamma = 1
    coincide with the untempered likelihood on n and n + 1 points.
    """
    shape = hyper.a_noise + 0.5 * (n + gamma)
    rate = hyper.b_noise + 0.5 * (np.asarray(sse) + gamma * np.asarray(next_sq_residual))
    return gammaln(shape) - shape * np.log(rate)


def _residuals(theta, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        return y
    return y - evaluate_expansion(theta, x.reshape(len(y), -1))


def log_marginal_likelihood(theta: KernelExpansion, data: "TrainingSet", hyper: Hyperparameters) -> float:
    r = _residuals(theta, data.x, data.y)
    return float(log_likelihood_from_sse(float(np.dot(r, r)), len(r), hyper))


def log_tempered_likelihood(theta: KernelExpansion, data_n: "TrainingSet", next_pair,
                            gamma: float, hyper: Hyperparameters) -> float:
    """Bridge between the posteriors on n and n + 1 points at reciprocal temperature gamma."""
    if not (0.0 <= gamma <= 1.0):
        raise InvalidParameterError(f"gamma must lie in [0, 1], got {gamma}")
    r = _residuals(theta, data_n.x, data_n.y)
    x_next, y_next = next_pair
    r_next = float(y_next) - evaluate_expansion(theta, np.asarray(x_next, dtype=np.float64).reshape(-1))
    return float(log_likelihood_from_sse(float(np.dot(r, r)), len(r), hyper,
                                         gamma=gamma, next_sq_residual=r_next * r_next))


def noise_precision_posterior(sse, n, hyper: Hyperparameters):
    """(shape, rate) of the Gamma conditional posterior of 1 / sigma^2."""
    return hyper.a_noise + 0.5 * n, hyper.b_noise + 0.5 * np.asarray(sse)


def sample_noise_variance(theta: KernelExpansion, data: "TrainingSet", hyper: Hyperparameters,
                          rng: np.random.Generator) -> float:
    r = _residuals(theta, data.x, data.y)
    shape, rate = noise_precision_posterior(float(np.dot(r, r)), len(r), hyper)
    return 1.0 / rng.gamma(shape, 1.0 / rate)


class MinMaxRescaler(TransformerMixin, BaseEstimator):
    """Map each predictor dimension onto [0, 1]; later queries are clamped.

    Parameters
    ----------
    margin : float
        Absolute widening applied to both ends of a dimension whose raw
        values are all equal.
    """

    def __init__(self, margin=RESCALE_MARGIN):
        self.margin = margin

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        flat = hi <= lo
        lo = np.where(flat, lo - self.margin, lo)
        hi = np.where(flat, hi + self.margin, hi)
        if np.any(hi <= lo):
            bad = np.flatnonzero(hi <= lo).tolist()
            raise DegenerateDimensionError(f"predictor dimension(s) {bad} are constant and cannot be widened")
        self.data_min_ = lo
        self.data_max_ = hi
        self.n_features_in_ = X.shape[1]
        return self

    def transform_with_flags(self, X):
        """Rescale and clamp; also return a per-row flag marking extrapolated queries."""
        check_is_fitted(self, "data_min_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} predictor columns, got {X.shape[1]}")
        Z = (X - self.data_min_) / (self.data_max_ - self.data_min_)
        outside = np.any((Z < 0.0) | (Z > 1.0), axis=1)
        return np.clip(Z, 0.0, 1.0), outside

    def transform(self, X):
        Z, outside = self.transform_with_flags(X)
        if outside.any():
            warnings.warn(f"{int(outside.sum())} quer(ies) outside the training range were clamped",
                          stacklevel=2)
        return Z

    def inverse_transform(self, Z):
        check_is_fitted(self, "data_min_")
        Z = check_array(Z, dtype=np.float64)
        return self.data_min_ + Z * (self.data_max_ - self.data_min_)


@dataclass
class TrainingSet:
    """Rescaled training pairs plus the transform that produced them."""

    x: np.ndarray
    y: np.ndarray
    rescaler: MinMaxRescaler | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        x = np.asarray(self.x, dtype=np.float64)
        self.x = x if x.ndim == 2 and x.shape[0] == len(self.y) else x.reshape(len(self.y), -1)

    @property
    def n(self) -> int:
        return len(self.y)

    @classmethod
    def empty(cls, M: int = 1) -> "TrainingSet":
        return cls(np.zeros((0, M)), np.zeros(0))


def rescale_fit(raw_x, raw_y) -> TrainingSet:
    raw_x = np.asarray(raw_x, dtype=np.float64)
    if raw_x.ndim == 1:
        raw_x = raw_x[:, None]
    if raw_x.shape[0] == 0:
        raise ValueError("at least one training pair is required to fit the rescaling")
    rescaler = MinMaxRescaler().fit(raw_x)
    x, _ = rescaler.transform_with_flags(raw_x)
    return TrainingSet(x, raw_y, rescaler)


def rescale_apply(rescaler: MinMaxRescaler, raw_x):
    """Return (rescaled points, extrapolation flags)."""
    raw_x = np.asarray(raw_x, dtype=np.float64)
    if raw_x.ndim == 1:
        raw_x = raw_x.reshape(-1, rescaler.n_features_in_)
    return rescaler.transform_with_flags(raw_x)
