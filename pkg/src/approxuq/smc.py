"""Adaptive sequential Monte Carlo over kernel expansions.

The population is a weighted sample from the posterior given the data
assimilated so far. A new datum is absorbed through a sequence of bridging
targets whose reciprocal temperature gamma is chosen so that each step keeps
a fixed fraction ``zeta`` of the effective sample size. Between steps the
population may be resampled and is always rejuvenated with the
reversible-jump mixture of :mod:`approxuq.rjmcmc`.

Particles are stored as padded arrays (one row per particle) so that the
compiled kernels can sweep the whole population at once.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from . import _core
from .errors import (CheckpointError, CheckpointVersionError, InvalidParameterError,
                     NonConvergenceError, NumericalError)
from .model import Hyperparameters, KernelExpansion, TrainingSet, log_likelihood_from_sse
from .rjmcmc import MoveConfig, MoveStats, adapt_steps

ZETA_DEFAULT = 0.95
N_DEFAULT = 1000
N_SWEEPS_DEFAULT = 5
MAX_BRIDGING_STEPS = 10_000
GAMMA_TOL = 1e-6
GAMMA_MAX_ITER = 60

# purpose tags for random substreams
_TAG_INIT, _TAG_MOVES, _TAG_RESAMPLE, _TAG_SHUFFLE = 1, 2, 3, 4

CHECKPOINT_MAGIC = b"AQSMCPT\x00"
CHECKPOINT_VERSION = 1


def substream(seed: int, counter: int, tag: int) -> np.random.Generator:
    """Independent generator keyed by (master seed, step counter, purpose)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(counter), int(tag)]))


@dataclass(frozen=True)
class BridgeRecord:
    """One bridging step: datum index, reached gamma, ESS after reweighing, resampled flag."""

    l: int
    gamma: float
    ess: float
    resampled: bool


@dataclass
class Particle:
    """Read-only view of one population member."""

    theta: KernelExpansion
    log_weight: float
    cached_sse: float
    cached_next_residual_sq: float


@dataclass
class Population:
    """Weighted particle population plus the data it has absorbed.

    Parameters
    ----------
    hyper : Hyperparameters
    move_cfg : MoveConfig
    seed : int
        Master seed; every random draw is taken from a substream of it.
    zeta : float
        Fraction of ESS retained per bridging step.
    ess_min_frac : float
        Resample when ESS <= ess_min_frac * N.
    n_sweeps : int
        Mixture moves per particle per rejuvenation.
    """

    hyper: Hyperparameters
    move_cfg: MoveConfig
    seed: int
    k: np.ndarray
    a0: np.ndarray
    amps: np.ndarray
    taus: np.ndarray
    centers: np.ndarray
    log_w: np.ndarray
    zeta: float = ZETA_DEFAULT
    ess_min_frac: float = 0.5
    n_sweeps: int = N_SWEEPS_DEFAULT
    counter: int = 0
    n_assimilated: int = 0
    gamma: float = 0.0
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = len(self.k)
        if N < 2:
            raise InvalidParameterError(f"a population needs at least 2 particles, got {N}")
        if not (0.0 < self.zeta < 1.0):
            raise InvalidParameterError(f"zeta must lie in (0, 1), got {self.zeta}")
        if not (0.0 < self.ess_min_frac <= 1.0):
            raise InvalidParameterError(f"ess_min_frac must lie in (0, 1], got {self.ess_min_frac}")
        if int(self.n_sweeps) < 1:
            raise InvalidParameterError(f"n_sweeps must be >= 1, got {self.n_sweeps}")
        self.n_sweeps = int(self.n_sweeps)
        M = self.hyper.M
        self.stats = np.zeros((N, _core.N_MOVES, 2), dtype=np.int64)
        self.move_totals = np.zeros((_core.N_MOVES, 2), dtype=np.int64)
        self._X = np.zeros((4, M))
        self._Y = np.zeros(4)
        self.fvals = np.zeros((N, 4))
        self.sse = np.zeros(N)
        self.r2 = np.zeros(N)
        self.npairs = np.zeros(N, dtype=np.int64)
        self.has_next = False

    # ------------------------------------------------------------ basic views
    @property
    def N(self) -> int:
        return len(self.k)

    @property
    def M(self) -> int:
        return self.hyper.M

    @property
    def data(self) -> TrainingSet:
        n = self.n_assimilated
        return TrainingSet(self._X[:n].copy(), self._Y[:n].copy())

    @property
    def next_pair(self):
        if not self.has_next:
            return None
        n = self.n_assimilated
        return self._X[n].copy(), float(self._Y[n])

    def weights(self) -> np.ndarray:
        """Normalized weights."""
        lw = self.log_w
        if not np.all(np.isfinite(lw) | (lw == -np.inf)) or np.all(lw == -np.inf):
            raise NumericalError("weights cannot be normalized (all zero or non-finite)")
        w = np.exp(lw - lw.max())
        return w / w.sum()

    def expansion(self, i: int) -> KernelExpansion:
        kk = int(self.k[i])
        return KernelExpansion(float(self.a0[i]), self.amps[i, :kk].copy(),
                               self.taus[i, :kk].copy(), self.centers[i, :kk].copy())

    def expansions(self) -> list[KernelExpansion]:
        return [self.expansion(i) for i in range(self.N)]

    @property
    def particles(self) -> list[Particle]:
        return [Particle(self.expansion(i), float(self.log_w[i]), float(self.sse[i]),
                         float(self.r2[i])) for i in range(self.N)]

    def evaluate(self, Xq) -> np.ndarray:
        """Regression means f(x; theta_i) of every particle on rescaled queries, shape (N, S)."""
        Xq = np.ascontiguousarray(np.asarray(Xq, dtype=np.float64).reshape(-1, self.M))
        return _core.evaluate_population(self.k, self.a0, self.amps, self.taus, self.centers, Xq)

    # ------------------------------------------------------------ data buffers
    def _ensure_capacity(self, rows: int):
        cap = len(self._Y)
        if rows <= cap:
            return
        new = max(rows, 2 * cap)
        X = np.zeros((new, self.M))
        Y = np.zeros(new)
        X[:cap] = self._X
        Y[:cap] = self._Y
        F = np.zeros((self.N, new))
        F[:, :cap] = self.fvals
        self._X, self._Y, self.fvals = X, Y, F

    def refresh(self):
        """Recompute all per-particle caches from the parameters and the data."""
        _core.refresh_caches(self.k, self.a0, self.amps, self.taus, self.centers, self.fvals,
                             self.sse, self.r2, self.npairs, self._X, self._Y,
                             self.n_assimilated, self.has_next,
                             self.move_cfg.delta_x, self.move_cfg.delta_a)

    def set_next_pair(self, x, y):
        """Stage ``(x, y)`` (x already rescaled) as the datum being bridged."""
        if self.has_next:
            raise InvalidParameterError("a datum is already being assimilated")
        x = np.asarray(x, dtype=np.float64).reshape(self.M)
        if np.any((x < 0) | (x > 1)) or not np.isfinite(y):
            raise InvalidParameterError("next pair must have x in the unit cube and finite y")
        n = self.n_assimilated
        self._ensure_capacity(n + 1)
        self._X[n] = x
        self._Y[n] = float(y)
        self.has_next = True
        self.gamma = 0.0
        self.refresh()

    def _fold_next_pair(self):
        self.n_assimilated += 1
        self.has_next = False
        self.gamma = 0.0
        self.refresh()

    def _log_lik(self, gamma: float) -> np.ndarray:
        return log_likelihood_from_sse(self.sse, self.n_assimilated, self.hyper, gamma, self.r2)

    def target_log_likelihood(self) -> np.ndarray:
        """Tempered log-likelihood of every particle under the current bridge."""
        return self._log_lik(self.gamma if self.has_next else 0.0)


# ------------------------------------------------------------------ operations

def init_population(N: int, hyper: Hyperparameters, cfg: MoveConfig | None = None, seed: int = 0,
                    **options) -> Population:
    """Draw N i.i.d. particles from the prior; all log-weights are zero."""
    if int(N) != N or N < 2:
        raise InvalidParameterError(f"N must be an integer >= 2, got {N}")
    N = int(N)
    cfg = cfg or MoveConfig()
    rng = substream(seed, 0, _TAG_INIT)
    K = max(hyper.k_max, 1)
    M = hyper.M
    kk = np.arange(hyper.k_max + 1)
    pk = -(kk + 1) * math.log(hyper.s + 1.0)
    pk = np.exp(pk - pk.max())
    pk /= pk.sum()
    k = rng.choice(hyper.k_max + 1, size=N, p=pk).astype(np.int64)
    a0 = np.zeros(N)
    amps = np.zeros((N, K))
    taus = np.ones((N, K))
    centers = np.zeros((N, K, M))
    for i in range(N):
        ki = int(k[i])
        sigma2 = 1.0 / rng.gamma(hyper.a0_amp, 1.0 / hyper.b0_amp)
        a = rng.normal(0.0, math.sqrt(sigma2), size=ki + 1)
        a0[i] = a[0]
        amps[i, :ki] = a[1:]
        if ki:
            mu = rng.exponential(hyper.a_mu, size=ki)
            taus[i, :ki] = rng.gamma(hyper.a_tau, 1.0 / (mu * hyper.a_tau))
            centers[i, :ki] = rng.random((ki, M))
    pop = Population(hyper, cfg, int(seed), k, a0, amps, taus, centers, np.zeros(N), **options)
    pop.refresh()
    return pop


def ess(population_or_log_weights) -> float:
    """Effective sample size 1 / sum W_i^2 from (unnormalized) log-weights."""
    lw = population_or_log_weights.log_w if isinstance(population_or_log_weights, Population) \
        else np.asarray(population_or_log_weights, dtype=np.float64)
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise NumericalError("non-finite log-weights")
    if np.all(lw == -np.inf):
        raise NumericalError("all weights are zero")
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


def next_gamma(population: Population, next_pair=None, zeta: float | None = None) -> float:
    """Largest gamma keeping ESS >= zeta * ESS_current, by bisection.

    Returns 1 when gamma = 1 already keeps enough ESS. If ``next_pair`` is
    given it is staged first.
    """
    if next_pair is not None and not population.has_next:
        population.set_next_pair(*next_pair)
    if not population.has_next:
        raise InvalidParameterError("no datum is staged for assimilation")
    g0 = population.gamma
    if g0 >= 1.0:
        raise InvalidParameterError("gamma is already 1")
    zeta = population.zeta if zeta is None else float(zeta)
    if not (0.0 < zeta < 1.0):
        raise InvalidParameterError(f"zeta must lie in (0, 1), got {zeta}")
    base = population._log_lik(g0)
    lw = population.log_w

    def ess_at(g):
        inc = population._log_lik(g) - base
        if not np.all(np.isfinite(inc)):
            raise NumericalError("non-finite incremental weights")
        return ess(lw + inc)

    target = zeta * ess(lw)
    if ess_at(1.0) >= target:
        return 1.0
    lo, hi = g0, 1.0
    for _ in range(GAMMA_MAX_ITER):
        # the tolerance ends the search only once some gamma > g0 is certified
        if hi - lo <= GAMMA_TOL and lo > g0:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if ess_at(mid) >= target:
            lo = mid
        else:
            hi = mid
    # guarantee progress if even the iteration cap certifies nothing
    return lo if lo > g0 else hi


def reweigh(population: Population, next_pair=None, gamma_new: float = 1.0) -> Population:
    """Multiply weights by the tempered-likelihood ratio and move to ``gamma_new``."""
    if next_pair is not None and not population.has_next:
        population.set_next_pair(*next_pair)
    if not (population.gamma <= gamma_new <= 1.0):
        raise InvalidParameterError(f"gamma_new must lie in [{population.gamma}, 1], got {gamma_new}")
    inc = population._log_lik(gamma_new) - population._log_lik(population.gamma)
    lw = population.log_w + inc
    if np.any(np.isnan(lw)):
        raise NumericalError("non-finite weights after reweighing")
    population.log_w = lw - logsumexp(lw)
    population.gamma = float(gamma_new)
    return population


def resample_multinomial(population: Population, rng: np.random.Generator | None = None) -> Population:
    """Multinomial resampling; all log-weights reset to zero."""
    if rng is None:
        population.counter += 1
        rng = substream(population.seed, population.counter, _TAG_RESAMPLE)
    W = population.weights()
    counts = rng.multinomial(population.N, W)
    idx = np.repeat(np.arange(population.N), counts)
    for name in ("k", "a0", "amps", "taus", "centers", "fvals", "sse", "r2", "npairs"):
        setattr(population, name, np.ascontiguousarray(getattr(population, name)[idx]))
    population.log_w = np.zeros(population.N)
    return population


def rejuvenate(population: Population, n_sweeps: int | None = None,
               rng: np.random.Generator | None = None) -> Population:
    """Apply ``n_sweeps`` mixture moves per particle targeting the current bridge."""
    n_sweeps = population.n_sweeps if n_sweeps is None else n_sweeps
    if int(n_sweeps) != n_sweeps or n_sweeps < 1:
        raise InvalidParameterError(f"n_sweeps must be a positive integer, got {n_sweeps}")
    if rng is None:
        population.counter += 1
        rng = substream(population.seed, population.counter, _TAG_MOVES)
    N, M = population.N, population.M
    U = rng.random((N, int(n_sweeps), _core.n_uniforms(M)))
    Z = rng.standard_normal((N, int(n_sweeps), _core.n_normals(M)))
    gamma = population.gamma if population.has_next else 0.0
    _core.sweep_population(population.k, population.a0, population.amps, population.taus,
                           population.centers, population.fvals, population.sse, population.r2,
                           population.npairs, population._X, population._Y,
                           population.n_assimilated, population.has_next, gamma,
                           population.hyper.as_array(), population.move_cfg.as_array(),
                           U, Z, population.stats)
    population.refresh()
    return population


def move_stats(population: Population) -> MoveStats:
    s = population.stats.sum(axis=0)
    return MoveStats(s[:, 0].copy(), s[:, 1].copy())


def adapt(population: Population) -> Population:
    """Retune move steps from the acceptance counters collected since the last call."""
    W = population.weights()
    mask = np.arange(population.amps.shape[1])[None, :] < population.k[:, None]
    num = float(W @ np.where(mask, population.amps ** 2, 0.0).sum(axis=1))
    den = float(W @ population.k)
    population.move_totals += population.stats.sum(axis=0)
    population.move_cfg = adapt_steps(move_stats(population), population.move_cfg,
                                      num / den if den > 0 else None)
    population.stats[:] = 0
    return population


def assimilate(population: Population, next_pair, callback: Callable | None = None) -> Population:
    """Absorb one (rescaled) datum through adaptive bridging steps.

    Each step: choose gamma, reweigh, resample if ESS <= ess_min_frac * N,
    rejuvenate, retune steps. The loop ends at gamma = 1, after which the
    datum joins the assimilated set. Weights are carried forward unchanged.
    """
    if not population.has_next:
        population.set_next_pair(*next_pair)
    steps = 0
    while population.gamma < 1.0:
        if steps >= MAX_BRIDGING_STEPS:
            raise NonConvergenceError(f"datum {population.n_assimilated} needed more than "
                                      f"{MAX_BRIDGING_STEPS} bridging steps")
        g = next_gamma(population)
        reweigh(population, None, g)
        e = ess(population)
        resampled = e <= population.ess_min_frac * population.N
        if resampled:
            resample_multinomial(population)
        rejuvenate(population)
        adapt(population)
        rec = BridgeRecord(population.n_assimilated, float(g), e, bool(resampled))
        population.history.append(rec)
        if callback is not None:
            callback(population, rec)
        steps += 1
    population._fold_next_pair()
    return population


def assimilate_all(population: Population, x, y, shuffle: bool = False, callback=None,
                   on_datum: Callable | None = None) -> Population:
    """Assimilate rows of (rescaled) ``x`` and ``y`` one at a time, in input order by default.

    ``callback(population, record)`` runs after every bridging step and
    ``on_datum(population)`` after every absorbed datum.
    """
    x = np.asarray(x, dtype=np.float64).reshape(len(y), -1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    order = np.arange(len(y))
    if shuffle:
        population.counter += 1
        order = substream(population.seed, population.counter, _TAG_SHUFFLE).permutation(len(y))
    for i in order:
        assimilate(population, (x[i], y[i]), callback)
        if on_datum is not None:
            on_datum(population)
    return population


def estimate(population: Population, test_function: Callable[[KernelExpansion], float]):
    """Weighted mean of ``test_function`` over particles and an ESS-based standard error."""
    W = population.weights()
    h = np.array([float(test_function(population.expansion(i))) for i in range(population.N)])
    if not np.all(np.isfinite(h)):
        raise NumericalError("test function is not finite on every particle")
    return weighted_mean_se(h, W)


def posterior_mean_sigma(population: Population) -> float:
    """Weighted posterior mean of the noise standard deviation (closed form per particle)."""
    from scipy.special import gammaln

    h = population.hyper
    shape = h.a_noise + 0.5 * population.n_assimilated
    n = population.n_assimilated
    r = population._Y[:n][None, :] - population.fvals[:, :n]
    rate = h.b_noise + 0.5 * np.einsum("ij,ij->i", r, r)
    # E[lambda^(-1/2)] for lambda ~ Gamma(shape, rate)
    e = np.sqrt(rate) * np.exp(gammaln(shape - 0.5) - gammaln(shape))
    return float(population.weights() @ e)


def weighted_mean_se(h, W):
    h = np.asarray(h, dtype=np.float64)
    mean = float(W @ h)
    var = float(W @ (h - mean) ** 2)
    n_eff = 1.0 / float(W @ W)
    return mean, math.sqrt(var / n_eff)


# ------------------------------------------------------------------ checkpoints
#
# Layout: magic (8 bytes) | version (uint32 LE) | header length (uint32 LE) |
# UTF-8 JSON header (sorted keys) | raw little-endian arrays in header order |
# SHA-256 of everything before it (32 bytes).

_ARRAYS = ("k", "a0", "amps", "taus", "centers", "log_w", "stats", "move_totals", "sse", "r2",
           "npairs")


def checkpoint_save(population: Population) -> bytes:
    n_rows = population.n_assimilated + (1 if population.has_next else 0)
    arrays = {name: getattr(population, name) for name in _ARRAYS}
    arrays["X"] = population._X[:n_rows]
    arrays["Y"] = population._Y[:n_rows]
    arrays["fvals"] = population.fvals[:, :n_rows]
    specs = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        specs.append({"name": name, "dtype": dt.str, "shape": list(arr.shape)})
        blobs.append(arr.astype(dt, copy=False).tobytes())
    header = {
        "hyper": asdict(population.hyper),
        "move_cfg": asdict(population.move_cfg),
        "seed": population.seed,
        "counter": population.counter,
        "zeta": population.zeta,
        "ess_min_frac": population.ess_min_frac,
        "n_sweeps": population.n_sweeps,
        "n_assimilated": population.n_assimilated,
        "gamma": population.gamma,
        "has_next": population.has_next,
        "history": [[r.l, r.gamma, r.ess, r.resampled] for r in population.history],
        "meta": population.meta,
        "arrays": specs,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)))
    buf.write(hbytes)
    for b in blobs:
        buf.write(b)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def checkpoint_load(stream: bytes) -> Population:
    data = bytes(stream)
    if len(data) < len(CHECKPOINT_MAGIC) + 8 + 32 or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a population checkpoint or truncated stream")
    body, digest = data[:-32], data[-32:]
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", body, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is not supported "
                                     f"(expected {CHECKPOINT_VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint is corrupt (checksum mismatch)")
    off += 8
    try:
        header = json.loads(body[off:off + hlen].decode("utf-8"))
        off += hlen
        arrays = {}
        for spec in header["arrays"]:
            dt = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"], dtype=np.int64))
            nbytes = count * dt.itemsize
            if off + nbytes > len(body):
                raise CheckpointError("checkpoint is truncated")
            arr = np.frombuffer(body, dtype=dt, count=count, offset=off).reshape(spec["shape"])
            arrays[spec["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
            off += nbytes
        if off != len(body):
            raise CheckpointError("checkpoint has trailing bytes")
        pop = Population(
            Hyperparameters(**header["hyper"]), MoveConfig(**header["move_cfg"]), header["seed"],
            arrays["k"], arrays["a0"], arrays["amps"], arrays["taus"], arrays["centers"],
            arrays["log_w"], zeta=header["zeta"], ess_min_frac=header["ess_min_frac"],
            n_sweeps=header["n_sweeps"], counter=header["counter"],
            n_assimilated=header["n_assimilated"], gamma=header["gamma"],
            history=[BridgeRecord(int(a), float(b), float(c), bool(d)) for a, b, c, d in header["history"]],
            meta=header["meta"],
        )
    except CheckpointError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"checkpoint header is malformed: {exc}") from exc
    n_rows = len(arrays["Y"])
    pop._ensure_capacity(max(n_rows, 1))
    pop._X[:n_rows] = arrays["X"]
    pop._Y[:n_rows] = arrays["Y"]
    pop.fvals[:, :n_rows] = arrays["fvals"]
    pop.stats = arrays["stats"]
    pop.move_totals = arrays["move_totals"]
    pop.sse = arrays["sse"]
    pop.r2 = arrays["r2"]
    pop.npairs = arrays["npairs"]
    pop.has_next = bool(header["has_next"])
    return pop
