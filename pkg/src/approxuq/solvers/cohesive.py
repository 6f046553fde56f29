"""Stochastic cohesive interface pulled apart in mode I.

A unit-length interface carries cohesive elements with a linear-decay
traction-separation law: traction starts at the strength T_c and falls to
zero at the critical opening delta_c = 2 G_c / T_c, so the released energy of
a fully opened element is G_c. Strength and fracture energy vary along the
interface through two correlated random fields

    T_c(z) = T0 + dT0 * U1(z)
    G_c(z) = G0 + dG0 * (rho * U1(z) + U2(z)),    U_i = 2 Phi(h_i) - 1,

where h1 has exponential correlation exp(-|dz| / z0) and h2 is white noise.

The exact solver uses the fine mesh and a small separation increment; the
approximate solver lumps 100 fine elements into one macro element (minimum
strength, mean fracture energy) and takes ten times larger increments.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit
from scipy.signal import lfilter
from scipy.special import ndtr

from ..errors import InvalidParameterError
from .base import SolverPair


@dataclass
class CohesiveConfig:
    """Field and loading constants (defaults: the reference specimen)."""

    T0: float = 1.0
    dT0: float = 0.5
    G0: float = 1e-3
    dG0: float = 0.5e-3
    rho: float = 0.9
    z0: float = 0.1
    n_elements: int = 1000
    delta_max: float = 0.5e-3
    delta_increment: float = 0.5e-6
    n_coarse: int = 10
    coarse_increment: float = 0.5e-5

    def __post_init__(self):
        if not (self.T0 > 0 and self.G0 > 0 and self.z0 > 0):
            raise InvalidParameterError("T0, G0 and z0 must be positive")
        if not (self.dT0 >= 0 and self.dG0 >= 0):
            raise InvalidParameterError("field amplitudes dT0 and dG0 must be nonnegative")
        if not (-1.0 <= self.rho <= 1.0):
            raise InvalidParameterError(f"rho must lie in [-1, 1], got {self.rho}")
        if not self.dT0 < self.T0:
            raise InvalidParameterError("dT0 < T0 is required for a positive strength field")
        if not self.dG0 * (abs(self.rho) + 1.0) < self.G0:
            raise InvalidParameterError("dG0 * (|rho| + 1) < G0 is required for a positive energy field")
        for name in ("n_elements", "n_coarse"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidParameterError(f"{name} must be a positive integer, got {v}")
            setattr(self, name, int(v))
        if not (self.delta_max > 0 and self.delta_increment > 0 and self.coarse_increment > 0):
            raise InvalidParameterError("separations and increments must be positive")
        if self.delta_increment > self.delta_max or self.coarse_increment > self.delta_max:
            raise InvalidParameterError("increments may not exceed delta_max")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FieldRealization:
    """Gaussian draws of one specimen and the element properties they induce."""

    h1: np.ndarray
    h2: np.ndarray
    Tc: np.ndarray
    Gc: np.ndarray

    @property
    def delta_c(self) -> np.ndarray:
        return 2.0 * self.Gc / self.Tc


def properties_from_gaussians(h1, h2, config: CohesiveConfig):
    """Element strengths and fracture energies from the latent Gaussian values."""
    u1 = 2.0 * ndtr(h1) - 1.0
    u2 = 2.0 * ndtr(h2) - 1.0
    Tc = config.T0 + config.dT0 * u1
    Gc = config.G0 + config.dG0 * (config.rho * u1 + u2)
    return Tc, Gc


def sample_fields(config: CohesiveConfig, n_grid: int | None = None, rng=None) -> FieldRealization:
    """Draw both fields at the midpoints of ``n_grid`` equal cells of [0, 1].

    h1 follows the exact first-order Markov recursion of the exponential
    correlation; h2 is one independent standard normal per cell.
    """
    n_grid = config.n_elements if n_grid is None else n_grid
    if int(n_grid) != n_grid or n_grid < 2:
        raise InvalidParameterError(f"n_grid must be an integer >= 2, got {n_grid}")
    rng = rng if rng is not None else np.random.default_rng()
    n_grid = int(n_grid)
    xi = rng.standard_normal(n_grid)
    h2 = rng.standard_normal(n_grid)
    phi = math.exp(-1.0 / (n_grid * config.z0))
    drive = math.sqrt(1.0 - phi * phi) * xi
    drive[0] = xi[0]
    h1 = lfilter([1.0], [1.0, -phi], drive)
    Tc, Gc = properties_from_gaussians(h1, h2, config)
    return FieldRealization(h1, h2, Tc, Gc)


# ------------------------------------------------------------------ integration

@njit(cache=True)
def _element_energy(Tc, dc, delta_max, increment):
    """Released energy of one element under a monotone separation ramp.

    Traction is advanced with the softening rate -T_c / delta_c per unit
    opening; the increment in which the traction reaches zero is split at
    the kink so the trapezoidal sum is exact for the piecewise-linear law.
    """
    n_steps = int(math.ceil(delta_max / increment - 1e-9))
    delta = 0.0
    T = Tc
    work = 0.0
    for i in range(n_steps):
        d_new = min(delta_max, (i + 1) * increment)
        if T > 0.0:
            T_new = T - Tc * (d_new - delta) / dc
            if T_new <= 0.0:
                work += 0.5 * T * (dc - delta)
                T_new = 0.0
            else:
                work += 0.5 * (T + T_new) * (d_new - delta)
            T = T_new
        delta = d_new
    return work


@njit(cache=True)
def _mean_energy(Tc, Gc, delta_max, increment):
    total = 0.0
    for e in range(Tc.shape[0]):
        total += _element_energy(Tc[e], 2.0 * Gc[e] / Tc[e], delta_max, increment)
    return total / Tc.shape[0]


@njit(cache=True)
def _coarse_energy(Tc, Gc, n_coarse, delta_max, increment):
    per = Tc.shape[0] // n_coarse
    total = 0.0
    for c in range(n_coarse):
        tmin = Tc[c * per]
        gsum = 0.0
        for e in range(c * per, (c + 1) * per):
            if Tc[e] < tmin:
                tmin = Tc[e]
            gsum += Gc[e]
        g = gsum / per
        total += _element_energy(tmin, 2.0 * g / tmin, delta_max, increment)
    return total / n_coarse


@njit(cache=True)
def _path_integrate(Tc, dc, path):
    """Traction history and accumulated work along an arbitrary separation path.

    Opening beyond the largest previous separation softens the element;
    closing unloads toward the origin along the secant (T proportional to
    delta); reopening below the previous maximum follows the same secant
    back up to the softening envelope. Beyond delta_c the traction is zero.
    """
    n = path.shape[0]
    T = np.zeros(n)
    work = np.zeros(n)
    dmax = 0.0  # largest separation reached
    tmax = Tc  # traction on the envelope at dmax
    prev_d = 0.0
    prev_t = Tc
    acc = 0.0
    for i in range(n):
        d = path[i]
        if d >= dmax:
            if d >= dc:
                t = 0.0
            else:
                t = Tc * (1.0 - d / dc)
            if prev_d < dmax:
                # finish the secant segment up to the envelope first
                acc += 0.5 * (prev_t + tmax) * (dmax - prev_d)
                prev_d, prev_t = dmax, tmax
            if dmax < dc <= d:
                acc += 0.5 * prev_t * (dc - prev_d)
            else:
                acc += 0.5 * (prev_t + t) * (d - prev_d)
            dmax, tmax = d, t
        else:
            t = tmax * d / dmax if dmax > 0.0 else 0.0
            acc += 0.5 * (prev_t + t) * (d - prev_d)
        T[i] = t
        work[i] = acc
        prev_d, prev_t = d, t
    return T, work


def element_energy(Tc: float, Gc: float, delta_max: float, increment: float) -> float:
    """Energy released by one element opened monotonically to ``delta_max``."""
    if not (Tc > 0 and Gc > 0 and delta_max >= 0 and increment > 0):
        raise InvalidParameterError("Tc, Gc and increment must be positive, delta_max nonnegative")
    if delta_max == 0:
        return 0.0
    return float(_element_energy(float(Tc), 2.0 * float(Gc) / float(Tc), float(delta_max), float(increment)))


def element_energy_closed_form(Tc: float, Gc: float, delta_max: float) -> float:
    """Area under the linear-decay law up to ``delta_max``."""
    dc = 2.0 * Gc / Tc
    if delta_max >= dc:
        return Gc
    return Tc * (delta_max - delta_max ** 2 / (2.0 * dc))


def integrate_path(Tc: float, Gc: float, path):
    """Traction and cumulative work along a separation history (loading, unloading, reloading)."""
    path = np.asarray(path, dtype=np.float64).reshape(-1)
    if np.any(path < 0):
        raise InvalidParameterError("separations must be nonnegative")
    return _path_integrate(float(Tc), 2.0 * float(Gc) / float(Tc), path)


def exact_cohesive_solve(realization: FieldRealization, config: CohesiveConfig) -> float:
    """Mean released energy over the fine elements (energy per unit interface length)."""
    Tc = np.ascontiguousarray(realization.Tc, dtype=np.float64)
    Gc = np.ascontiguousarray(realization.Gc, dtype=np.float64)
    return float(_mean_energy(Tc, Gc, config.delta_max, config.delta_increment))


def approx_cohesive_solve(realization: FieldRealization, config: CohesiveConfig) -> float:
    """Coarse-mesh energy: minimum strength and mean energy per macro element, larger increments."""
    n = len(realization.Tc)
    if n % config.n_coarse:
        raise InvalidParameterError(f"{config.n_coarse} macro elements do not divide {n} fine elements")
    Tc = np.ascontiguousarray(realization.Tc, dtype=np.float64)
    Gc = np.ascontiguousarray(realization.Gc, dtype=np.float64)
    return float(_coarse_energy(Tc, Gc, config.n_coarse, config.delta_max, config.coarse_increment))


class CohesiveSolverPair(SolverPair):
    """Fine-mesh exact and coarse-mesh approximate cohesive-interface solvers."""

    M = 1
    name = "cohesive"

    def __init__(self, config: CohesiveConfig | None = None):
        self.config = config or CohesiveConfig()
        if self.config.n_elements % self.config.n_coarse:
            raise InvalidParameterError("n_coarse must divide n_elements")

    def draw(self, rng):
        return sample_fields(self.config, self.config.n_elements, rng)

    def approximate(self, xi) -> np.ndarray:
        return np.array([approx_cohesive_solve(xi, self.config)])

    def exact(self, xi) -> float:
        return exact_cohesive_solve(xi, self.config)
