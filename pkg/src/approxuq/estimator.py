"""Scikit-learn style front end.

:class:`ApproximateSolverRegressor` learns p(y | x) from pairs of
approximate-solver outputs x and exact outputs y, and turns the posterior
into probabilities of events of y under the predictor distribution pi_x.
"""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import predict as _predict
from . import smc
from .errors import NumericalError
from .model import Hyperparameters, MinMaxRescaler
from .rjmcmc import MoveConfig

_HYPER = ("s", "a_tau", "a_mu", "a0_amp", "b0_amp", "a_noise", "b_noise", "k_max")


class ApproximateSolverRegressor(RegressorMixin, BaseEstimator):
    """Bayesian kernel-expansion regression of exact outputs on approximate ones.

    Parameters
    ----------
    n_particles : int
        Population size.
    zeta : float
        ESS fraction kept per bridging step.
    ess_min_frac : float
        Resampling threshold as a fraction of ``n_particles``.
    n_sweeps : int
        Mixture moves per particle per rejuvenation.
    k_max, s, a_tau, a_mu, a0_amp, b0_amp, a_noise, b_noise : prior constants
    c, delta_x, delta_a, step_scale, step_loc : move constants
    step_amp : float or None
        Initial amplitude random-walk step; ``None`` uses 0.1 * amp_scale.
    amp_scale : float or None
        Initial birth-amplitude spread; ``None`` uses std(y) of the first batch.
    x_range : (lower, upper) or None
        Fixed predictor bounds for the rescaling; ``None`` uses the first
        batch's min and max.
    standardize_y : bool
        Model (y - mean) / sd of the first batch instead of raw y. The prior
        constants are not unit free (b_noise in particular), so outputs far
        from unit scale need this or rescaled constants. Every prediction
        method takes and returns raw units either way.
    shuffle : bool
        Assimilate each batch in a seeded random order instead of input order.
    random_state : int
        Master seed.

    Examples
    --------
    >>> from approxuq.solvers import SyntheticSolverPair
    >>> X, y = SyntheticSolverPair("m1").generate(20, seed=1)
    >>> est = ApproximateSolverRegressor(n_particles=100, random_state=0).fit(X, y)
    >>> est.predict(X[:2]).shape
    (2,)
    """

    def __init__(self, n_particles=1000, zeta=0.95, ess_min_frac=0.5, n_sweeps=5,
                 k_max=100, s=1.0, a_tau=1.0, a_mu=0.01, a0_amp=1.0, b0_amp=1.0,
                 a_noise=2.0, b_noise=1e-6, c=0.2, delta_x=1.0, delta_a=1.0,
                 step_amp=None, step_scale=0.5, step_loc=0.1, amp_scale=None, x_range=None,
                 standardize_y=False, shuffle=False, random_state=0):
        self.n_particles = n_particles
        self.zeta = zeta
        self.ess_min_frac = ess_min_frac
        self.n_sweeps = n_sweeps
        self.k_max = k_max
        self.s = s
        self.a_tau = a_tau
        self.a_mu = a_mu
        self.a0_amp = a0_amp
        self.b0_amp = b0_amp
        self.a_noise = a_noise
        self.b_noise = b_noise
        self.c = c
        self.delta_x = delta_x
        self.delta_a = delta_a
        self.step_amp = step_amp
        self.step_scale = step_scale
        self.step_loc = step_loc
        self.amp_scale = amp_scale
        self.x_range = x_range
        self.standardize_y = standardize_y
        self.shuffle = shuffle
        self.random_state = random_state

    # ------------------------------------------------------------ fitting
    def _hyper(self, M):
        return Hyperparameters(**{k: getattr(self, k) for k in _HYPER}, M=M)

    def _move_cfg(self, y):
        if self.amp_scale is not None:
            scale = float(self.amp_scale)
        else:
            scale = float(np.std(y)) if len(y) > 1 else 0.0
            scale = scale if scale > 0 else max(abs(float(np.mean(y))), 1.0) * 0.1
        if not np.isfinite(scale):
            raise NumericalError("the spread of the training outputs is not finite")
        step = self.step_amp if self.step_amp is not None else 0.1 * scale
        return MoveConfig(c=self.c, delta_x=self.delta_x, delta_a=self.delta_a, step_amp=step,
                          step_scale=self.step_scale, step_loc=self.step_loc, birth_amp_sd=scale)

    def fit(self, X, y, callback=None, on_datum=None):
        """Learn from scratch on (X, y), assimilating the pairs one at a time."""
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if self.random_state is None or int(self.random_state) != self.random_state:
            raise ValueError("random_state must be an integer seed")
        if self.x_range is not None:
            bounds = np.asarray(self.x_range, dtype=np.float64).reshape(2, -1) * np.ones((2, X.shape[1]))
            self.rescaler_ = MinMaxRescaler(margin=0.0).fit(bounds)
        else:
            self.rescaler_ = MinMaxRescaler().fit(X)
        self.n_features_in_ = X.shape[1]
        meta = {"x_min": self.rescaler_.data_min_.tolist(), "x_max": self.rescaler_.data_max_.tolist()}
        if self.standardize_y:
            sd = float(np.std(y))
            meta["y_shift"] = float(np.mean(y))
            meta["y_scale"] = sd if sd > 0 else 1.0
        y = (y - meta.get("y_shift", 0.0)) / meta.get("y_scale", 1.0)
        pop = smc.init_population(self.n_particles, self._hyper(X.shape[1]), self._move_cfg(y),
                                  seed=int(self.random_state), zeta=self.zeta,
                                  ess_min_frac=self.ess_min_frac, n_sweeps=self.n_sweeps)
        pop.meta = meta
        self.population_ = pop
        Z, outside = self.rescaler_.transform_with_flags(X)
        if outside.any():
            warnings.warn(f"{int(outside.sum())} training point(s) lie outside x_range and were clamped",
                          stacklevel=2)
        smc.assimilate_all(pop, Z, y, shuffle=self.shuffle, callback=callback, on_datum=on_datum)
        return self

    def partial_fit(self, X, y, callback=None, on_datum=None):
        """Assimilate additional pairs into the current posterior (fits if not yet fitted)."""
        if not hasattr(self, "population_"):
            return self.fit(X, y, callback=callback, on_datum=on_datum)
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self._check_width(X)
        Z, outside = self.rescaler_.transform_with_flags(X)
        if outside.any():
            warnings.warn(f"{int(outside.sum())} new training point(s) lie outside the original "
                          "predictor range and were clamped", stacklevel=2)
        smc.assimilate_all(self.population_, Z, self._to_model_y(y, self.population_), shuffle=self.shuffle,
                           callback=callback, on_datum=on_datum)
        return self

    @staticmethod
    def _to_model_y(y, pop):
        return (y - pop.meta.get("y_shift", 0.0)) / pop.meta.get("y_scale", 1.0)

    def _check_width(self, X):
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")

    @property
    def n_assimilated_(self) -> int:
        check_is_fitted(self, "population_")
        return self.population_.n_assimilated

    # ------------------------------------------------------------ prediction
    def predict(self, X, return_std: bool = False):
        """Posterior mean of the regression function f(x); optionally its posterior sd."""
        check_is_fitted(self, "population_")
        X = check_array(X, dtype=np.float64)
        self._check_width(X)
        Z, _ = self.rescaler_.transform_with_flags(X)
        pop = self.population_
        F = pop.evaluate(Z)
        W = pop.weights()
        mean = W @ F
        shift, scale = pop.meta.get("y_shift", 0.0), pop.meta.get("y_scale", 1.0)
        if not return_std:
            return shift + scale * mean
        return shift + scale * mean, scale * np.sqrt(np.maximum(W @ (F - mean) ** 2, 0.0))

    def _xs(self, xsamples):
        check_is_fitted(self, "population_")
        if isinstance(xsamples, _predict.MarginalXSamples):
            return xsamples
        xs = check_array(np.asarray(xsamples, dtype=np.float64).reshape(len(xsamples), -1),
                         dtype=np.float64)
        self._check_width(xs)
        return _predict.MarginalXSamples(xs)

    def conditional_exceedance(self, X, y0, levels=_predict.DEFAULT_LEVELS):
        """Per-x posterior mean and quantiles of Pr[y > y0 | x].

        Returns
        -------
        mean : ndarray of shape (n,)
        quantiles : ndarray of shape (len(levels), n)
        """
        check_is_fitted(self, "population_")
        X = check_array(X, dtype=np.float64)
        self._check_width(X)
        pop = self.population_
        Z, _ = self.rescaler_.transform_with_flags(X)
        sig = _predict.draw_sigmas(pop)
        Q = _predict.normal_cdf((pop.evaluate(Z) - _predict.to_model_y(pop, y0)) / sig[:, None])
        W = pop.weights()
        return W @ Q, _predict._column_quantiles(Q, W, _predict._check_levels(levels))

    def exceedance_probability(self, xsamples, y0, levels=_predict.DEFAULT_LEVELS):
        """Pr[y > y0] under pi_x with credible bounds (a :class:`PredictionSummary`)."""
        return _predict.event_probability(self.population_, self._xs(xsamples), y0, levels)

    def cdf(self, xsamples, y0_grid, levels=_predict.DEFAULT_LEVELS):
        """Exceedance curve Pr[y > y0] over a grid of thresholds."""
        return _predict.cdf_curve(self.population_, self._xs(xsamples), y0_grid, levels)

    def expectation(self, xsamples, h="identity", quad_points=_predict.GH_NODES_DEFAULT,
                    levels=_predict.DEFAULT_LEVELS):
        """Posterior summary of E[h(y)] under pi_x."""
        return _predict.expectation_of(self.population_, self._xs(xsamples), h, quad_points, levels)

    def active_learning_scores(self, xsamples, y0, p_low=0.01, p_high=0.99, method="quantile_gap"):
        """x samples ranked by how much a new exact run there would narrow the band."""
        return _predict.active_learning_scores(self.population_, self._xs(xsamples), y0,
                                               p_low, p_high, method)

    def noise_sd(self) -> float:
        """Posterior mean of the noise standard deviation."""
        check_is_fitted(self, "population_")
        return smc.posterior_mean_sigma(self.population_) * self.population_.meta.get("y_scale", 1.0)

    # ------------------------------------------------------------ persistence
    def to_bytes(self) -> bytes:
        check_is_fitted(self, "population_")
        self.population_.meta["estimator_params"] = self.get_params()
        return smc.checkpoint_save(self.population_)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ApproximateSolverRegressor":
        pop = smc.checkpoint_load(blob)
        est = cls(**pop.meta.get("estimator_params", {}))
        lo = np.asarray(pop.meta["x_min"], dtype=np.float64)
        hi = np.asarray(pop.meta["x_max"], dtype=np.float64)
        rescaler = MinMaxRescaler()
        rescaler.data_min_, rescaler.data_max_, rescaler.n_features_in_ = lo, hi, len(lo)
        est.rescaler_ = rescaler
        est.n_features_in_ = len(lo)
        est.population_ = pop
        return est

    def save(self, path):
        from .io import atomic_write_bytes

        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def effort(n_exact: int, n_approx: int, speed_ratio: float) -> float:
    """Cost in exact-solver-call equivalents."""
    if not speed_ratio > 0:
        raise ValueError("speed_ratio must be positive")
    return n_exact + n_approx / speed_ratio


__all__ = ["ApproximateSolverRegressor", "effort"]
