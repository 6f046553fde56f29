"""Common interface of an (exact, approximate) solver pair."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidParameterError


def realization_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for realization ``index`` of a batch; independent of batch order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


class SolverPair:
    """An uncertain input xi, an expensive exact output y(xi) and cheap predictors x(xi).

    Subclasses implement :meth:`draw`, :meth:`approximate` and :meth:`exact`.
    """

    M = 1
    name = "solver"

    def draw(self, rng: np.random.Generator):
        raise NotImplementedError

    def approximate(self, xi) -> np.ndarray:
        raise NotImplementedError

    def exact(self, xi) -> float:
        raise NotImplementedError

    def pair(self, xi):
        return self.approximate(xi), self.exact(xi)

    def generate(self, count: int, seed: int = 0, start: int = 0):
        """Training pairs for realizations ``start .. start + count - 1`` of ``seed``.

        Returns
        -------
        X : ndarray of shape (count, M)
        y : ndarray of shape (count,)
        """
        if int(count) != count or count < 0:
            raise InvalidParameterError(f"count must be a nonnegative integer, got {count}")
        X = np.empty((int(count), self.M))
        y = np.empty(int(count))
        for i in range(int(count)):
            xi = self.draw(realization_rng(seed, start + i))
            X[i], y[i] = self.pair(xi)
        return X, y

    def generate_x(self, count: int, seed: int = 0, start: int = 0) -> np.ndarray:
        X = np.empty((int(count), self.M))
        for i in range(int(count)):
            X[i] = self.approximate(self.draw(realization_rng(seed, start + i)))
        return X

    def generate_y(self, count: int, seed: int = 0, start: int = 0) -> np.ndarray:
        return np.array([self.exact(self.draw(realization_rng(seed, start + i)))
                         for i in range(int(count))])


def sample_pi_x(solver: SolverPair, count: int = 5000, rng=None, seed: int | None = None):
    """Plain Monte Carlo draws of the approximate outputs x.

    Either ``rng`` (a Generator, used to derive the batch seed) or ``seed``
    may be given.
    """
    from ..predict import MarginalXSamples

    if int(count) != count or count < 1:
        raise InvalidParameterError(f"count must be a positive integer, got {count}")
    if seed is None:
        rng = rng if rng is not None else np.random.default_rng()
        seed = int(rng.integers(0, 2**63 - 1))
    return MarginalXSamples(solver.generate_x(int(count), seed), provenance=f"monte-carlo:{solver.name}")
