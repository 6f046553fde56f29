"""Command-line interface.

Subcommands: ``generate``, ``fit``, ``update``, ``predict``, ``cdf``,
``score`` and ``diagnostics``. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as _config
from . import smc
from .errors import (CheckpointError, ConfigError, DataFileError, DegenerateDimensionError,
                     InvalidParameterError, NonConvergenceError, NumericalError)
from .io import read_pairs, read_xsamples, write_provenance, write_table, x_columns

log = logging.getLogger("approxuq")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
_TAG_TRAIN, _TAG_PI_X = 1, 2


def batch_seed(seed: int, tag: int) -> int:
    """Seed of a realization batch (training pairs or pi_x samples) derived from the master seed."""
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1, np.uint64)[0])


def parse_levels(text: str):
    try:
        levels = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--levels: expected comma-separated numbers, got {text!r}") from None
    if not levels:
        raise ConfigError("--levels: no levels given")
    return levels


def parse_grid(spec) -> np.ndarray:
    """``start:stop:num`` (inclusive linear grid) or comma-separated thresholds."""
    if spec is None:
        raise ConfigError("a threshold grid is required (--grid or predict.grid)")
    if isinstance(spec, (list, tuple)):
        values = [float(v) for v in spec]
    elif ":" in spec:
        parts = spec.split(":")
        try:
            start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
        except (ValueError, IndexError):
            raise ConfigError(f"--grid: expected start:stop:num, got {spec!r}") from None
        if len(parts) != 3 or num < 1:
            raise ConfigError(f"--grid: expected start:stop:num with num >= 1, got {spec!r}")
        values = np.linspace(start, stop, num).tolist()
    else:
        try:
            values = [float(v) for v in spec.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--grid: expected numbers, got {spec!r}") from None
    if not values:
        raise ConfigError("--grid: empty grid")
    return np.asarray(values, dtype=np.float64)


def _level_name(p: float) -> str:
    pct = p * 100.0
    return f"q{int(round(pct)):02d}" if abs(pct - round(pct)) < 1e-9 else f"q{pct:g}".replace(".", "_")


# ------------------------------------------------------------------ config plumbing

def build_config(args) -> dict:
    cfg = _config.load(args.config) if args.config else _config.resolve({})
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    paths = {}
    for flag, key in (("pairs", "pairs"), ("pi_x", "pi_x"), ("checkpoint", "checkpoint"), ("out", "out")):
        v = getattr(args, flag, None)
        if v is not None:
            paths[key] = str(v)
    if paths:
        overrides["paths"] = paths
    pred = {}
    if getattr(args, "y0", None) is not None:
        pred["y0"] = args.y0
    if getattr(args, "levels", None) is not None:
        pred["levels"] = parse_levels(args.levels)
    if getattr(args, "grid", None) is not None:
        pred["grid"] = args.grid
    if pred:
        overrides["predict"] = pred
    return _config.resolve(_config._merge(cfg, overrides))


def _set_workers(n: int):
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _require(cfg, key, what):
    v = cfg["paths"].get(key)
    if not v:
        raise ConfigError(f"{what} path is required (--{key.replace('_', '-')} or paths.{key})")
    return v


def _provenance(cfg, command, **extra):
    rec = {"command": command, "version": __version__, "seed": cfg["seed"],
           "config_hash": _config.config_hash(cfg), "solver": cfg["solver"]["name"]}
    rec.update(extra)
    return rec


def _solver(cfg):
    from .solvers import make_solver

    try:
        return make_solver(cfg["solver"]["name"], **cfg["solver"]["options"])
    except (TypeError, InvalidParameterError) as exc:
        raise ConfigError(f"config error at solver/options: {exc}") from exc


def _estimator(cfg):
    from .estimator import ApproximateSolverRegressor

    params = _config.estimator_params(cfg)
    if params.get("x_range") is not None:
        params["x_range"] = [list(np.atleast_1d(b)) for b in params["x_range"]]
    return ApproximateSolverRegressor(**params)


def _load_estimator(path):
    from .estimator import ApproximateSolverRegressor

    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataFileError(f"cannot read checkpoint {path}: {exc}") from exc
    return ApproximateSolverRegressor.from_bytes(blob)


def _xsamples(cfg, est):
    from .predict import MarginalXSamples

    path = _require(cfg, "pi_x", "pi_x samples")
    xs = read_xsamples(path)
    if xs.shape[1] != est.n_features_in_:
        raise DataFileError(f"{path}: {xs.shape[1]} predictor column(s), checkpoint expects "
                            f"{est.n_features_in_}")
    return MarginalXSamples(xs, provenance=str(path))


# ------------------------------------------------------------------ commands

def cmd_generate(cfg) -> int:
    solver = _solver(cfg)
    pairs_path = _require(cfg, "pairs", "training pairs")
    gen = cfg["generate"]
    X, y = solver.generate(gen["n_train"], batch_seed(cfg["seed"], _TAG_TRAIN))
    h = _config.config_hash(cfg)
    write_table(pairs_path, x_columns(solver.M) + ["y"], np.column_stack([X, y]).tolist(), h)
    write_provenance(pairs_path, _provenance(cfg, "generate", rows=len(y), kind="pairs"))
    log.info("wrote %d training pairs to %s", len(y), pairs_path)
    pix = cfg["paths"].get("pi_x")
    if pix:
        xs = solver.generate_x(gen["n_pi_x"], batch_seed(cfg["seed"], _TAG_PI_X))
        write_table(pix, x_columns(solver.M), xs.tolist(), h)
        write_provenance(pix, _provenance(cfg, "generate", rows=len(xs), kind="pi_x",
                                          approx_calls=len(xs)))
        log.info("wrote %d pi_x samples to %s", len(xs), pix)
    return EXIT_OK


class _DatumDiagnostics:
    """Per-datum summary rows collected while assimilating."""

    header = (["n", "bridging_steps", "gamma_first", "ess_min", "ess_final", "resamples"]
              + [f"acc_{m}" for m in ("birth", "death", "split", "merge", "update_amp",
                                      "update_scale", "update_loc")]
              + ["mean_k", "mean_sigma"])

    def __init__(self, hist_start: int = 0, totals_start=None):
        self.rows = []
        self._hist = hist_start
        self._totals = np.zeros((7, 2), dtype=np.int64) if totals_start is None else totals_start.copy()

    def __call__(self, pop):
        recs = pop.history[self._hist:]
        self._hist = len(pop.history)
        diff = pop.move_totals - self._totals
        self._totals = pop.move_totals.copy()
        with np.errstate(invalid="ignore", divide="ignore"):
            rates = np.where(diff[:, 0] > 0, diff[:, 1] / np.maximum(diff[:, 0], 1), np.nan)
        W = pop.weights()
        self.rows.append([pop.n_assimilated, len(recs), recs[0].gamma if recs else float("nan"),
                          min(r.ess for r in recs) if recs else float("nan"),
                          smc.ess(pop), sum(r.resampled for r in recs)]
                         + [float(v) for v in rates]
                         + [float(W @ pop.k), smc.posterior_mean_sigma(pop)])


def _assimilate_with_diag(est, X, y, first: bool) -> _DatumDiagnostics:
    if first:
        diag = _DatumDiagnostics()
        est.fit(X, y, on_datum=diag)
    else:
        pop = est.population_
        diag = _DatumDiagnostics(len(pop.history), pop.move_totals)
        est.partial_fit(X, y, on_datum=diag)
    return diag


def cmd_fit(cfg) -> int:
    pairs_path = _require(cfg, "pairs", "training pairs")
    ck = _require(cfg, "checkpoint", "checkpoint")
    X, y = read_pairs(pairs_path)
    if len(y) == 0:
        raise DataFileError(f"{pairs_path}: no training pairs")
    est = _estimator(cfg)
    diag = _assimilate_with_diag(est, X, y, first=True)
    h = _config.config_hash(cfg)
    est.population_.meta["config_hash"] = h
    est.save(ck)
    write_provenance(ck, _provenance(cfg, "fit", pairs=str(pairs_path), n=len(y)))
    out = cfg["paths"].get("out") or f"{ck}.diagnostics.csv"
    write_table(out, _DatumDiagnostics.header, diag.rows, h)
    log.info("assimilated %d pairs; checkpoint %s; diagnostics %s", len(y), ck, out)
    return EXIT_OK


def cmd_update(cfg) -> int:
    pairs_path = _require(cfg, "pairs", "training pairs")
    ck = _require(cfg, "checkpoint", "checkpoint")
    est = _load_estimator(ck)
    X, y = read_pairs(pairs_path)
    out = cfg["paths"].get("out") or ck
    h = _config.config_hash(cfg)
    rows = []
    if len(y):
        if X.shape[1] != est.n_features_in_:
            raise DataFileError(f"{pairs_path}: {X.shape[1]} predictor column(s), checkpoint "
                                f"expects {est.n_features_in_}")
        diag = _assimilate_with_diag(est, X, y, first=False)
        rows = diag.rows
    est.population_.meta["updates"] = est.population_.meta.get("updates", 0) + 1
    est.save(out)
    write_provenance(out, _provenance(cfg, "update", pairs=str(pairs_path), added=len(y),
                                      n=est.n_assimilated_))
    write_table(f"{out}.diagnostics.csv", _DatumDiagnostics.header, rows, h)
    return EXIT_OK


def _levels(cfg):
    return [float(v) for v in cfg["predict"]["levels"]]


def _y0(cfg):
    y0 = cfg["predict"]["y0"]
    if y0 is None:
        raise ConfigError("a threshold is required (--y0 or predict.y0)")
    return float(y0)


def cmd_predict(cfg) -> int:
    from .estimator import effort
    from .predict import event_probability

    est = _load_estimator(_require(cfg, "checkpoint", "checkpoint"))
    xs = _xsamples(cfg, est)
    levels = _levels(cfg)
    r = event_probability(est.population_, xs, _y0(cfg), levels)
    n = est.n_assimilated_
    calls = len(xs)
    header = ["n", "mean"] + [_level_name(p) for p in levels] + ["mc_se", "approx_calls", "cost"]
    row = [n, r.posterior_mean] + [r.quantiles[p] for p in levels] + [
        r.mc_se, calls, effort(n, calls, cfg["predict"]["speed_ratio"])]
    out = _require(cfg, "out", "output")
    write_table(out, header, [row], _config.config_hash(cfg))
    write_provenance(out, _provenance(cfg, "predict", y0=_y0(cfg)))
    return EXIT_OK


def cmd_cdf(cfg) -> int:
    from .predict import cdf_curve

    est = _load_estimator(_require(cfg, "checkpoint", "checkpoint"))
    xs = _xsamples(cfg, est)
    levels = _levels(cfg)
    grid = parse_grid(cfg["predict"]["grid"])
    curve = cdf_curve(est.population_, xs, grid, levels)
    header = ["y0", "mean"] + [_level_name(p) for p in levels] + ["mc_se"]
    rows = [[r.threshold, r.posterior_mean] + [r.quantiles[p] for p in levels] + [r.mc_se]
            for r in curve]
    out = _require(cfg, "out", "output")
    write_table(out, header, rows, _config.config_hash(cfg))
    write_provenance(out, _provenance(cfg, "cdf", points=len(grid)))
    return EXIT_OK


def cmd_score(cfg) -> int:
    from .predict import active_learning_scores

    est = _load_estimator(_require(cfg, "checkpoint", "checkpoint"))
    xs = _xsamples(cfg, est)
    levels = _levels(cfg)
    p_low, p_high = (levels[0], levels[-1]) if len(levels) > 1 else (0.01, 0.99)
    x_sorted, scores, order = active_learning_scores(est.population_, xs, _y0(cfg), p_low, p_high,
                                                     cfg["predict"]["score_method"])
    top = cfg["predict"]["top"]
    m = len(scores) if top is None else min(top, len(scores))
    header = ["rank", "index"] + x_columns(x_sorted.shape[1]) + ["score"]
    rows = [[i + 1, int(order[i])] + [float(v) for v in x_sorted[i]] + [float(scores[i])]
            for i in range(m)]
    out = _require(cfg, "out", "output")
    write_table(out, header, rows, _config.config_hash(cfg))
    write_provenance(out, _provenance(cfg, "score", y0=_y0(cfg)))
    return EXIT_OK


def cmd_diagnostics(cfg) -> int:
    from .rjmcmc import MOVE_NAMES

    est = _load_estimator(_require(cfg, "checkpoint", "checkpoint"))
    pop = est.population_
    W = pop.weights()
    pk = np.bincount(pop.k, weights=W, minlength=pop.hyper.k_max + 1)
    out = _require(cfg, "out", "output")
    h = _config.config_hash(cfg)
    last = int(np.max(np.flatnonzero(pk))) if pk.any() else 0
    write_table(out, ["k", "probability"], [[k, float(pk[k])] for k in range(last + 1)], h)
    stem = Path(out)
    write_table(f"{stem}.history.csv", ["n", "gamma", "ess", "resampled"],
                [[r.l + 1, r.gamma, r.ess, int(r.resampled)] for r in pop.history], h)
    tot = pop.move_totals
    write_table(f"{stem}.moves.csv", ["move", "proposed", "accepted", "rate"],
                [[name, int(tot[i, 0]), int(tot[i, 1]),
                  float(tot[i, 1] / tot[i, 0]) if tot[i, 0] else float("nan")]
                 for i, name in enumerate(MOVE_NAMES)], h)
    write_table(f"{stem}.summary.csv", ["quantity", "value"],
                [["n", pop.n_assimilated], ["particles", pop.N], ["ess", smc.ess(pop)],
                 ["mean_k", float(W @ pop.k)], ["mean_sigma", smc.posterior_mean_sigma(pop)],
                 ["bridging_steps", len(pop.history)]], h)
    write_provenance(out, _provenance(cfg, "diagnostics"))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "update": cmd_update, "predict": cmd_predict,
            "cdf": cmd_cdf, "score": cmd_score, "diagnostics": cmd_diagnostics}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, help="cap on compiled-kernel threads")
    common.add_argument("--out", type=Path, help="output file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="approxuq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="run the built-in solvers")
    p.add_argument("--pairs", type=Path, help="training pairs file to write")
    p.add_argument("--pi-x", dest="pi_x", type=Path, help="pi_x samples file to write")

    p = sub.add_parser("fit", parents=[common], help="fit a posterior to training pairs")
    p.add_argument("--pairs", type=Path)
    p.add_argument("--checkpoint", type=Path, help="checkpoint to write")

    p = sub.add_parser("update", parents=[common], help="assimilate more pairs into a checkpoint")
    p.add_argument("--pairs", type=Path)
    p.add_argument("--checkpoint", type=Path, help="checkpoint to read (and overwrite without --out)")

    for name, text in (("predict", "event probability with credible bounds"),
                       ("cdf", "exceedance curve over a threshold grid"),
                       ("score", "rank pi_x samples for new exact runs")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", type=Path)
        p.add_argument("--pi-x", dest="pi_x", type=Path)
        p.add_argument("--levels", help="comma-separated quantile levels, e.g. 0.01,0.99")
        if name == "cdf":
            p.add_argument("--grid", help="start:stop:num or comma-separated thresholds")
        else:
            p.add_argument("--y0", type=float, help="threshold of the event y > y0")

    p = sub.add_parser("diagnostics", parents=[common], help="posterior P(k), ESS history, moves")
    p.add_argument("--checkpoint", type=Path)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        _set_workers(cfg["workers"])
        return COMMANDS[args.command](cfg)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFileError, CheckpointError, DegenerateDimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, NonConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
