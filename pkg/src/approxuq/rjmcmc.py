"""Reversible-jump move mixture on kernel expansions.

Seven moves are mixed: birth/death, split/merge and random-walk updates of an
amplitude, a scale or a center. Every move leaves the bridged posterior
(prior x tempered likelihood) invariant. The heavy lifting lives in the
compiled kernel ``approxuq._core.apply_move``; the functions here expose the
same moves on a single :class:`~approxuq.model.KernelExpansion` plus the
closed-form split/merge algebra.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import _core
from .errors import InvalidParameterError
from .model import Hyperparameters, KernelExpansion, TrainingSet

MOVE_NAMES = ("birth", "death", "split", "merge", "update_amp", "update_scale", "update_loc")
STEP_MIN, STEP_MAX = 1e-6, 1e2
ADAPT_FACTOR = 1.5


@dataclass
class MoveConfig:
    """Move-mixture constants and adaptive random-walk step sizes."""

    c: float = 0.2
    delta_x: float = 1.0
    delta_a: float = 1.0
    step_amp: float = 0.1
    step_scale: float = 0.5
    step_loc: float = 0.1
    birth_amp_sd: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParameterError(f"{f.name} must be positive, got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([self.c, self.delta_x, self.delta_a, self.step_amp,
                         self.step_scale, self.step_loc, self.birth_amp_sd], dtype=np.float64)

    def replace(self, **changes) -> "MoveConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return MoveConfig(**d)


@dataclass
class MoveStats:
    """Per-move proposal and acceptance counters."""

    proposed: np.ndarray = field(default_factory=lambda: np.zeros(_core.N_MOVES, dtype=np.int64))
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(_core.N_MOVES, dtype=np.int64))

    def record(self, move: int, accepted: bool):
        self.proposed[move] += 1
        self.accepted[move] += int(bool(accepted))

    def merge(self, other: "MoveStats") -> "MoveStats":
        return MoveStats(self.proposed + other.proposed, self.accepted + other.accepted)

    def rates(self) -> dict:
        with np.errstate(invalid="ignore", divide="ignore"):
            r = self.accepted / self.proposed
        return {name: (float(r[i]) if self.proposed[i] else float("nan"))
                for i, name in enumerate(MOVE_NAMES)}

    def reset(self):
        self.proposed[:] = 0
        self.accepted[:] = 0


@dataclass
class BridgedTarget:
    """pi_{n,gamma}: prior x likelihood on ``data`` x tempered factor for ``next_pair``.

    With no data and no pending pair the target is the prior itself.
    """

    hyper: Hyperparameters
    data: TrainingSet | None = None
    next_pair: tuple | None = None
    gamma: float = 0.0

    def arrays(self):
        M = self.hyper.M
        data = self.data if self.data is not None else TrainingSet.empty(M)
        n = data.n
        X = np.zeros((n + 1, M))
        Y = np.zeros(n + 1)
        X[:n] = data.x
        Y[:n] = data.y
        has_next = self.next_pair is not None
        if has_next:
            X[n] = np.asarray(self.next_pair[0], dtype=np.float64).reshape(M)
            Y[n] = float(self.next_pair[1])
        return X, Y, n, has_next, float(self.gamma)

    def log_density(self, theta: KernelExpansion) -> float:
        from .model import log_likelihood_from_sse, log_prior, evaluate_expansion
        lp = log_prior(theta, self.hyper)
        if not np.isfinite(lp):
            return lp
        X, Y, n, has_next, gamma = self.arrays()
        r = Y[:n] - evaluate_expansion(theta, X[:n]) if n else np.zeros(0)
        r2 = (Y[n] - evaluate_expansion(theta, X[n])) ** 2 if has_next else 0.0
        return lp + float(log_likelihood_from_sse(float(r @ r), n, self.hyper, gamma, r2))


def move_probabilities(theta: KernelExpansion, cfg: MoveConfig, hyper: Hyperparameters) -> dict:
    """Normalized selection probabilities of the seven moves in state ``theta``."""
    has_pair = len(merge_candidates(theta, cfg)) > 0
    return {name: float(_core.move_prob(i, theta.k, has_pair, cfg.c, hyper.s, hyper.k_max))
            for i, name in enumerate(MOVE_NAMES)}


def select_move(theta: KernelExpansion, cfg: MoveConfig, hyper: Hyperparameters,
                rng: np.random.Generator) -> str:
    probs = move_probabilities(theta, cfg, hyper)
    names = list(probs)
    return names[int(rng.choice(len(names), p=np.array([probs[n] for n in names])))]


def merge_candidates(theta: KernelExpansion, cfg: MoveConfig) -> list[tuple[int, int]]:
    """All kernel pairs close enough (in normalized distance and amplitude) to merge."""
    out = []
    for i in range(theta.k):
        for j in range(i + 1, theta.k):
            if _core.eligible(theta.amplitudes[i], theta.scales[i], theta.centers[i],
                              theta.amplitudes[j], theta.scales[j], theta.centers[j],
                              cfg.delta_x, cfg.delta_a):
                out.append((i, j))
    return out


def merge_params(kernel1, kernel2):
    """Combine two kernels ``(a, tau, nu)`` into one.

    Precisions combine harmonically (1/tau = 1/tau1 + 1/tau2), which makes
    this the exact inverse of :func:`split_params`; the amplitude keeps the
    integral of the pair unchanged and the center is the midpoint.
    """
    a1, t1, c1 = kernel1
    a2, t2, c2 = kernel2
    t = 1.0 / (1.0 / t1 + 1.0 / t2)
    a = math.sqrt(t) * (a1 / math.sqrt(t1) + a2 / math.sqrt(t2))
    c = 0.5 * (np.asarray(c1, dtype=np.float64) + np.asarray(c2, dtype=np.float64))
    return a, t, c


def merge_params_printed(kernel1, kernel2):
    """Merge with the square-root precision rule as printed in the source article.

    Kept only for comparison; it is not the inverse of :func:`split_params`.
    """
    a1, t1, c1 = kernel1
    a2, t2, c2 = kernel2
    t = 1.0 / math.sqrt(1.0 / t1 + 1.0 / t2)
    a = math.sqrt(t) * (a1 / math.sqrt(t1) + a2 / math.sqrt(t2))
    return a, t, 0.5 * (np.asarray(c1, dtype=np.float64) + np.asarray(c2, dtype=np.float64))


def split_params(kernel, u_tau: float, u_x, u_a: float):
    """Split ``(a, tau, nu)`` into two kernels using the dimension-matching draws."""
    a, t, c = kernel
    if not (0.0 < u_tau < 1.0):
        raise InvalidParameterError(f"u_tau must lie in (0, 1), got {u_tau}")
    c = np.asarray(c, dtype=np.float64)
    u_x = np.asarray(u_x, dtype=np.float64).reshape(c.shape)
    sq1, sq2 = math.sqrt(u_tau), math.sqrt(1.0 - u_tau)
    ahat = (a + u_a * (sq1 - sq2)) / (sq1 + sq2)
    k1 = (ahat - u_a, t / u_tau, c - u_x)
    k2 = (ahat + u_a, t / (1.0 - u_tau), c + u_x)
    for _, _, cc in (k1, k2):
        if np.any((cc < 0.0) | (cc > 1.0)):
            raise InvalidParameterError("split center leaves the unit cube")
    return k1, k2


def split_jacobian(tau: float, u_tau: float, M: int = 1) -> float:
    return math.exp(_core.log_split_jacobian(float(tau), float(u_tau), int(M)))


# ------------------------------------------------------------------ single-particle moves

def _pack(theta: KernelExpansion, hyper: Hyperparameters, target: BridgedTarget, cfg: MoveConfig):
    K = max(hyper.k_max, 1)
    M = hyper.M
    k = np.array([theta.k], dtype=np.int64)
    a0 = np.array([theta.intercept])
    amps = np.zeros((1, K))
    taus = np.ones((1, K))
    centers = np.zeros((1, K, M))
    amps[0, :theta.k] = theta.amplitudes
    taus[0, :theta.k] = theta.scales
    centers[0, :theta.k] = theta.centers.reshape(theta.k, M)
    X, Y, n, has_next, gamma = target.arrays()
    fvals = np.zeros((1, n + 1))
    sse = np.zeros(1)
    r2 = np.zeros(1)
    npairs = np.zeros(1, dtype=np.int64)
    _core.refresh_caches(k, a0, amps, taus, centers, fvals, sse, r2, npairs,
                         X, Y, n, has_next, cfg.delta_x, cfg.delta_a)
    return (k, a0, amps, taus, centers, fvals, sse, r2, npairs, X, Y, n, has_next, gamma)


def _unpack(k, a0, amps, taus, centers) -> KernelExpansion:
    kk = int(k[0])
    return KernelExpansion(float(a0[0]), amps[0, :kk].copy(), taus[0, :kk].copy(),
                           centers[0, :kk].copy())


def apply_move(move: str | int, theta: KernelExpansion, target: BridgedTarget, cfg: MoveConfig,
               rng: np.random.Generator, stats: MoveStats | None = None):
    """Propose one move of the given kind; returns ``(theta', accepted)``.

    Moves with zero selection probability in the current state (for example a
    death when k = 0) are not proposed and return ``(theta, False)``.
    """
    m = MOVE_NAMES.index(move) if isinstance(move, str) else int(move)
    hyper = target.hyper
    state = _pack(theta, hyper, target, cfg)
    M = hyper.M
    u = rng.random(_core.n_uniforms(M))
    z = rng.standard_normal(_core.n_normals(M))
    acc = bool(_core.single_move(m, *state[:9], *state[9:], hyper.as_array(), cfg.as_array(), u, z))
    if stats is not None and _core.raw_weight(m, theta.k, int(state[8][0]) > 0,
                                              cfg.c, hyper.s, hyper.k_max) > 0:
        stats.record(m, acc)
    if not acc:
        return theta, False
    new = _unpack(*state[:5])
    new.check(hyper.k_max)
    return new, True


def birth(theta, target, cfg, rng, stats=None):
    return apply_move("birth", theta, target, cfg, rng, stats)


def death(theta, target, cfg, rng, stats=None):
    return apply_move("death", theta, target, cfg, rng, stats)


def split(theta, target, cfg, rng, stats=None):
    return apply_move("split", theta, target, cfg, rng, stats)


def merge(theta, target, cfg, rng, stats=None):
    return apply_move("merge", theta, target, cfg, rng, stats)


def update_amplitude(theta, target, cfg, rng, stats=None):
    return apply_move("update_amp", theta, target, cfg, rng, stats)


def update_scale(theta, target, cfg, rng, stats=None):
    return apply_move("update_scale", theta, target, cfg, rng, stats)


def update_location(theta, target, cfg, rng, stats=None):
    return apply_move("update_loc", theta, target, cfg, rng, stats)


def mixture_step(theta, target, cfg, rng, stats=None):
    """Draw a move from the mixture and apply it."""
    name = select_move(theta, cfg, target.hyper, rng)
    return apply_move(name, theta, target, cfg, rng, stats)


def adapt_steps(stats: MoveStats, cfg: MoveConfig, mean_sq_amplitude: float | None = None) -> MoveConfig:
    """Retune random-walk steps toward a 0.2-0.4 acceptance band and reset ``stats``.

    ``mean_sq_amplitude`` is the population-weighted mean of squared kernel
    amplitudes; it becomes the birth amplitude variance (1.0 when no
    particle carries a kernel).
    """
    steps = {"step_amp": _core.UPDATE_AMP, "step_scale": _core.UPDATE_SCALE, "step_loc": _core.UPDATE_LOC}
    changes = {}
    for name, m in steps.items():
        value = getattr(cfg, name)
        if stats.proposed[m] > 0:
            rate = stats.accepted[m] / stats.proposed[m]
            if rate > 0.4:
                value *= ADAPT_FACTOR
            elif rate < 0.2:
                value /= ADAPT_FACTOR
        changes[name] = float(np.clip(value, STEP_MIN, STEP_MAX))
    if mean_sq_amplitude is None or not np.isfinite(mean_sq_amplitude) or mean_sq_amplitude <= 0:
        changes["birth_amp_sd"] = 1.0
    else:
        changes["birth_amp_sd"] = float(math.sqrt(mean_sq_amplitude))
    stats.reset()
    return cfg.replace(**changes)
