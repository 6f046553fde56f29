"""Analytic benchmark solver pairs with closed-form oracles.

Both families draw a standard normal vector xi and map its coordinates to
uniform predictors u_i = Phi(xi_i):

``"m1"`` (one predictor)
    x = u1,  y = g(u1) + noise * xi_2

``"m2"`` (two predictors)
    x = (u1, u2),  y = g(u1) + beta * (2 u2 - 1) + noise * xi_3

with g(u) = 1.5 u + 0.4 sin(6 u). In ``"m2"`` the second predictor explains
beta^2 / 3 of the variance left after conditioning on u1 alone.
"""
from __future__ import annotations


import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from ..errors import InvalidParameterError
from .base import SolverPair

FAMILIES = ("m1", "m2")


def g(u):
    u = np.asarray(u, dtype=np.float64)
    return 1.5 * u + 0.4 * np.sin(6.0 * u)


class SyntheticSolverPair(SolverPair):
    """Closed-form benchmark; see the module docstring for the families."""

    name = "synthetic"

    def __init__(self, family: str = "m1", noise: float = 0.2, beta: float = 0.5):
        if family not in FAMILIES:
            raise InvalidParameterError(f"unknown family {family!r}; choose from {FAMILIES}")
        if not noise >= 0 or not beta >= 0:
            raise InvalidParameterError("noise and beta must be nonnegative")
        self.family = family
        self.noise = float(noise)
        self.beta = float(beta)
        self.M = 1 if family == "m1" else 2
        self.dim_xi = 2 if family == "m1" else 3

    def draw(self, rng):
        return rng.standard_normal(self.dim_xi)

    def approximate(self, xi) -> np.ndarray:
        return ndtr(np.asarray(xi, dtype=np.float64)[: self.M])

    def exact(self, xi) -> float:
        return float(self.response(np.asarray(xi, dtype=np.float64)[None, :])[0])

    def response(self, XI) -> np.ndarray:
        """Vectorized y over rows of xi."""
        u = ndtr(XI[:, : self.M])
        y = g(u[:, 0]) + self.noise * XI[:, self.M]
        if self.family == "m2":
            y = y + self.beta * (2.0 * u[:, 1] - 1.0)
        return y

    def draw_batch(self, count: int, rng):
        """Vectorized (X, y) for oracle computations."""
        XI = rng.standard_normal((int(count), self.dim_xi))
        return ndtr(XI[:, : self.M]), self.response(XI)

    # ---------------------------------------------------------------- oracles
    def exceedance_oracle(self, y0, nodes: int = 400):
        """Pr[y > y0] by Gauss-Legendre quadrature over the uniform predictors."""
        y0 = np.atleast_1d(np.asarray(y0, dtype=np.float64))
        t, w = leggauss(nodes)
        u = 0.5 * (t + 1.0)
        w = 0.5 * w
        mean = g(u)
        if self.family == "m2":
            mean = (mean[:, None] + self.beta * (2.0 * u[None, :] - 1.0)).ravel()
            w = np.outer(w, w).ravel()
        out = np.empty(len(y0))
        for i, y in enumerate(y0):
            if self.noise == 0:
                out[i] = w @ (mean > y)
            else:
                out[i] = w @ ndtr((mean - y) / self.noise)
        return out if len(out) > 1 else float(out[0])

    def conditional_exceedance(self, x, y0):
        """Pr[y > y0 | x] for the full predictor vector."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.M)
        mean = g(x[:, 0])
        if self.family == "m2":
            mean = mean + self.beta * (2.0 * x[:, 1] - 1.0)
        if self.noise == 0:
            return (mean > y0).astype(float)
        return ndtr((mean - y0) / self.noise)

    def conditional_variance(self, first_only: bool = False) -> float:
        """Var(y | x), or Var(y | x1) with ``first_only``."""
        v = self.noise ** 2
        if self.family == "m2" and first_only:
            v += self.beta ** 2 / 3.0
        return v

    def describe(self) -> str:
        extra = f", beta={self.beta}" if self.family == "m2" else ""
        return f"synthetic {self.family} (noise={self.noise}{extra})"


def synthetic_pair(spec: SyntheticSolverPair | str, xi):
    """One (x, y) pair of a synthetic family for the given draws ``xi``."""
    solver = spec if isinstance(spec, SyntheticSolverPair) else SyntheticSolverPair(spec)
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    if len(xi) != solver.dim_xi:
        raise InvalidParameterError(f"family {solver.family} needs {solver.dim_xi} draws, got {len(xi)}")
    return solver.pair(xi)


__all__ = ["SyntheticSolverPair", "synthetic_pair", "g", "FAMILIES"]
