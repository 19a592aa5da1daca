"""Command-line front end: run experiments from JSON manifests and compare traces.

Usage::

    adbo run --config exp.json [--seed N] [--out trace.csv]
    adbo compare --a a.csv --b b.csv --target F

Exit codes: 0 success, 1 solver divergence (partial trace kept),
2 configuration or I/O error.  ``BILEVEL_LOG`` selects the log level
(``error``, ``info`` or ``debug``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from .cpbo import CpboConfig, CpboSteps, run_cpbo
from .engine import DelayModel, RunConfig, TraceRow, run_adbo, run_sdbo
from .exceptions import ConfigError, DatasetFormatError, DivergenceError
from .lower_level import LowerConfig
from .problems import (
    corrupt_labels,
    load_dataset,
    make_hypercleaning,
    make_quadratic_toy,
    make_regcoef,
    make_synthetic_classification,
    partition_dataset,
    train_val_split,
)
from .saddle import StepSizes

__all__ = [
    "ExperimentConfig",
    "CompareReport",
    "TRACE_HEADER",
    "parse_config",
    "config_from_dict",
    "config_to_dict",
    "build_problem",
    "run_experiment",
    "write_trace",
    "read_trace",
    "compare_runs",
    "main",
]

logger = logging.getLogger("adbo")

TRACE_HEADER = ("t", "vtime", "F", "h", "gap_sq", "planes", "c1", "active")
ALGORITHMS = ("adbo", "sdbo", "cpbo")
PROBLEMS = ("toy_quadratic", "hypercleaning", "regcoef")
EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

_DATASET_KEYS = ("dataset", "dataset_format", "dataset_header")
_SYNTHETIC_KEYS = ("n_samples", "n_features", "margin")
_LOGISTIC_KEYS = _DATASET_KEYS + _SYNTHETIC_KEYS + ("corruption", "val_fraction", "C_r")
_TOY_KEYS = ("toy_n", "toy_a", "toy_b", "toy_c")


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat, fully resolved experiment manifest."""

    algorithm: str
    problem: str
    seed: int = 0
    out: str | None = None
    N: int = 18
    S: int = 9
    tau: int = 15
    K: int = 1
    k_pre: int = 10
    T1: int | None = None
    M: int = 20
    eps: float = 0.01
    eta_x: float = 0.01
    eta_y: float = 0.02
    eta_v: float = 0.01
    eta_z: float = 0.02
    eta_lambda: float = 0.1
    eta_theta: float = 0.01
    c1_floor: float = 1e-6
    c2_floor: float = 1e-6
    lam_max: float = 1e3
    theta_max: float = 1e3
    lower_mu: float = 1.0
    lower_eta: float = 0.1
    warm_start: bool = False
    delay_mu: float = 3.5
    delay_sigma: float = 1.0
    stragglers: tuple = ()
    straggler_multiplier: float = 4.0
    max_iter: int = 100_000
    gap_tol: float = 1e-3
    local_steps: int = 1
    toy_n: int = 1
    toy_a: float | tuple = 1.0
    toy_b: float | tuple | None = None
    toy_c: float = 1.0
    dataset: str | None = None
    dataset_format: str = "csv"
    dataset_header: bool = False
    n_samples: int = 500
    n_features: int = 20
    margin: float = 0.0
    corruption: float = 0.0
    val_fraction: float = 0.2
    C_r: float = 1e-3

    @property
    def T1_resolved(self):
        if self.T1 is not None:
            return self.T1
        return 500 if self.algorithm == "cpbo" else 100_000


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    if value is None:
        if "None" in kind:
            return None
        raise ConfigError(f"{key}: null is not allowed")
    if kind.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
        return value
    if kind.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if kind == "tuple" or "tuple" in kind:
        if isinstance(value, (list, tuple)):
            items = tuple(_number(key, v, integer=(kind == "tuple")) for v in value)
            return items
        if kind == "tuple":
            raise ConfigError(f"{key}: expected a list, got {value!r}")
    return _number(key, value)


def _number(key, value, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if integer:
        if not isinstance(value, int):
            raise ConfigError(f"{key}: expected integer entries, got {value!r}")
        return value
    if not np.isfinite(value):
        raise ConfigError(f"{key}: must be finite")
    return float(value)


def config_from_dict(raw):
    """Validate a flat mapping and apply defaults.  Unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key in ("algorithm", "problem"):
        if key not in raw:
            raise ConfigError(f"{key}: required key missing")
    values = {k: _coerce(k, v) for k, v in raw.items()}
    if values["algorithm"] not in ALGORITHMS:
        raise ConfigError(f"algorithm: must be one of {ALGORITHMS}")
    if values["problem"] not in PROBLEMS:
        raise ConfigError(f"problem: must be one of {PROBLEMS}")
    if values["algorithm"] == "cpbo":
        values.setdefault("N", 1)
        values.setdefault("S", 1)
        if values["N"] != 1:
            raise ConfigError("N: the cpbo algorithm needs N = 1")
    cfg = ExperimentConfig(**values)
    _validate(cfg, raw)
    return cfg


def _validate(cfg, raw):
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}")

    need(cfg.N >= 1, "N", "must be >= 1")
    need(1 <= cfg.S <= cfg.N, "S", f"must satisfy 1 <= S <= N={cfg.N}")
    need(cfg.tau >= 1, "tau", "must be >= 1")
    need(cfg.K >= 1, "K", "must be >= 1")
    need(cfg.k_pre >= 1, "k_pre", "must be >= 1")
    need(cfg.T1 is None or cfg.T1 >= 0, "T1", "must be >= 0")
    need(cfg.M >= 1, "M", "must be >= 1")
    need(cfg.eps > 0, "eps", "must be > 0")
    for key in ("eta_x", "eta_y", "eta_v", "eta_z", "eta_lambda", "eta_theta",
                "lower_mu", "lower_eta", "lam_max", "theta_max", "straggler_multiplier"):
        need(getattr(cfg, key) > 0, key, "must be > 0")
    need(cfg.c1_floor >= 0, "c1_floor", "must be >= 0")
    need(cfg.c2_floor >= 0, "c2_floor", "must be >= 0")
    need(cfg.delay_sigma >= 0, "delay_sigma", "must be >= 0")
    need(all(0 <= i < cfg.N for i in cfg.stragglers), "stragglers", f"indices must lie in [0, {cfg.N})")
    need(cfg.max_iter >= 1, "max_iter", "must be >= 1")
    need(cfg.gap_tol >= 0, "gap_tol", "must be >= 0")
    need(cfg.local_steps >= 1, "local_steps", "must be >= 1")
    if cfg.problem == "toy_quadratic":
        for key in _LOGISTIC_KEYS:
            need(key not in raw, key, "not used by the toy_quadratic problem")
        need(cfg.toy_n >= 1, "toy_n", "must be >= 1")
        for key in ("toy_a", "toy_b"):
            val = getattr(cfg, key)
            need(not isinstance(val, tuple) or len(val) == cfg.N, key, f"needs one entry per worker (N={cfg.N})")
    else:
        for key in _TOY_KEYS:
            need(key not in raw, key, f"not used by the {cfg.problem} problem")
        if cfg.dataset is not None:
            for key in _SYNTHETIC_KEYS:
                need(key not in raw, key, "give either a dataset path or synthetic parameters, not both")
        else:
            for key in _DATASET_KEYS[1:]:
                need(key not in raw, key, "only meaningful together with a dataset path")
        need(cfg.dataset_format in ("csv", "libsvm"), "dataset_format", "must be 'csv' or 'libsvm'")
        need(cfg.n_samples >= 2 and cfg.n_features >= 1, "n_samples", "need n_samples >= 2 and n_features >= 1")
        need(0.0 <= cfg.corruption <= 1.0, "corruption", "must be in [0, 1]")
        need(0.0 < cfg.val_fraction < 1.0, "val_fraction", "must be in (0, 1)")
        need(cfg.C_r >= 0, "C_r", "must be >= 0")


def config_to_dict(cfg):
    """JSON-ready mapping; ``config_from_dict(config_to_dict(c)) == c``."""
    if cfg.problem == "toy_quadratic":
        skip = set(_LOGISTIC_KEYS)
    elif cfg.dataset is None:
        skip = set(_TOY_KEYS) | set(_DATASET_KEYS)
    else:
        skip = set(_TOY_KEYS) | set(_SYNTHETIC_KEYS)
    out = {}
    for f in fields(cfg):
        if f.name in skip:
            continue
        val = getattr(cfg, f.name)
        out[f.name] = list(val) if isinstance(val, tuple) else val
    return out


def parse_config(path=None, overrides=None):
    """Read a UTF-8 JSON manifest and apply ``overrides`` (flag values win)."""
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(raw)


# --------------------------------------------------------------------------
# problem construction

def _per_worker(val, N):
    return list(val) if isinstance(val, tuple) else [val] * N


def build_problem(cfg):
    if cfg.problem == "toy_quadratic":
        a = _per_worker(cfg.toy_a, cfg.N)
        if cfg.toy_b is None:
            # consistent targets: the upper-level optimum satisfies h = 0
            target = float(np.mean(a))
            b = [2.0 * cfg.lower_eta * cfg.toy_c * target] * cfg.N
        else:
            b = _per_worker(cfg.toy_b, cfg.N)
        return make_quadratic_toy(cfg.N, cfg.toy_n, cfg.toy_n, a, b, [cfg.toy_c] * cfg.N)

    if cfg.dataset is not None:
        try:
            data = load_dataset(cfg.dataset, cfg.dataset_format, header=cfg.dataset_header)
        except OSError as exc:
            raise ConfigError(f"dataset: cannot read {cfg.dataset}: {exc.strerror or exc}") from exc
    else:
        data = make_synthetic_classification(cfg.n_samples, cfg.n_features, cfg.seed, cfg.margin)
    data = train_val_split(data, cfg.val_fraction, cfg.seed)
    if cfg.corruption > 0:
        data, _ = corrupt_labels(data, cfg.corruption, cfg.seed)
    shards = partition_dataset(data, cfg.N, cfg.seed)
    if cfg.problem == "hypercleaning":
        return make_hypercleaning(shards, cfg.C_r)
    return make_regcoef(shards)


def _solver_config(cfg, problem):
    if cfg.algorithm == "cpbo":
        return CpboConfig(
            problem,
            steps=CpboSteps(cfg.eta_x, cfg.eta_y, cfg.eta_lambda),
            K=cfg.K,
            eta_lower=cfg.lower_eta,
            T1=cfg.T1_resolved,
            k_pre=cfg.k_pre,
            M=cfg.M,
            eps=cfg.eps,
            max_iter=cfg.max_iter,
            gap_tol=cfg.gap_tol,
        )
    lower = LowerConfig(cfg.K, cfg.lower_mu, cfg.lower_eta, cfg.lower_eta, cfg.lower_eta, cfg.warm_start)
    steps = StepSizes(cfg.eta_x, cfg.eta_y, cfg.eta_v, cfg.eta_z, cfg.eta_lambda, cfg.eta_theta)
    delay = DelayModel.with_stragglers(
        cfg.N, cfg.stragglers, cfg.straggler_multiplier, cfg.delay_mu, cfg.delay_sigma
    )
    return RunConfig(
        problem, S=cfg.S, tau=cfg.tau, lower=lower, k_pre=cfg.k_pre, T1=cfg.T1_resolved,
        M=cfg.M, eps=cfg.eps, steps=steps, c1_floor=cfg.c1_floor, c2_floor=cfg.c2_floor,
        delay=delay, max_iter=cfg.max_iter, gap_tol=cfg.gap_tol, seed=cfg.seed,
        local_steps=cfg.local_steps, lam_max=cfg.lam_max, theta_max=cfg.theta_max,
    )


_RUNNERS = {"adbo": run_adbo, "sdbo": run_sdbo, "cpbo": run_cpbo}


def run_experiment(cfg, out=None):
    """Run ``cfg``, write its trace and return ``(exit_code, trace)``.

    Configuration and dataset errors raise :class:`ConfigError` before any
    file is written.  On divergence the rows produced so far are written
    and the exit code is 1.
    """
    out = out or cfg.out or "trace.csv"
    try:
        problem = build_problem(cfg)
    except DatasetFormatError as exc:
        raise ConfigError(f"dataset: {exc}") from exc
    solver_cfg = _solver_config(cfg, problem)
    start = time.perf_counter()
    try:
        trace = _RUNNERS[cfg.algorithm](solver_cfg)
        code = EXIT_OK
    except DivergenceError as exc:
        logger.error("run diverged: %s", exc)
        trace, code = list(exc.trace or []), EXIT_DIVERGED
    wall = time.perf_counter() - start
    write_trace(trace, out)
    if trace:
        last = trace[-1]
        print(
            f"{cfg.algorithm}: iterations={last.t} F={last.F:.6g} gap_sq={last.gap_sq:.3g} "
            f"vtime={last.vtime:.6g} wall={wall:.2f}s trace={out}"
        )
    else:
        print(f"{cfg.algorithm}: no iterations completed, wall={wall:.2f}s trace={out}")
    return code, trace


# --------------------------------------------------------------------------
# trace files

def _fmt(x):
    return "%.17g" % x


def write_trace(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow([
                r.t, _fmt(r.vtime), _fmt(r.F), _fmt(r.h), _fmt(r.gap_sq),
                r.planes, _fmt(r.c1), ";".join(str(i) for i in r.active),
            ])


def read_trace(path):
    """Parse a trace CSV; raises :class:`ValueError` naming the bad line."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_HEADER:
            raise ValueError(f"{path}: line 1: expected header {','.join(TRACE_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(TRACE_HEADER):
                raise ValueError(f"{path}: line {lineno}: expected {len(TRACE_HEADER)} fields")
            try:
                active = tuple(int(x) for x in rec[7].split(";")) if rec[7] else ()
                rows.append(TraceRow(
                    int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]),
                    float(rec[4]), int(rec[5]), float(rec[6]), active,
                ))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return rows


@dataclass(frozen=True)
class CompareReport:
    target: float
    time_a: float | None
    time_b: float | None

    @property
    def ratio(self):
        if self.time_a is None or self.time_b is None or self.time_b == 0:
            return None
        return self.time_a / self.time_b

    def __str__(self):
        def show(t):
            return "unreached" if t is None else f"{t:.6g}"

        ratio = "n/a" if self.ratio is None else f"{self.ratio:.6g}"
        return f"target F={self.target:.6g}: time_a={show(self.time_a)} time_b={show(self.time_b)} ratio={ratio}"


def _time_to_target(rows, target):
    for r in rows:
        if r.F <= target:
            return r.vtime
    return None


def compare_runs(trace_a, trace_b, target):
    """First virtual time each trace reaches ``F <= target`` and their ratio ``a / b``."""
    return CompareReport(float(target), _time_to_target(trace_a, target), _time_to_target(trace_b, target))


# --------------------------------------------------------------------------
# entry point

def _configure_logging():
    name = os.environ.get("BILEVEL_LOG", "error").strip().lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"BILEVEL_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("adbo").setLevel(LOG_LEVELS[name])


def _parser():
    p = argparse.ArgumentParser(prog="adbo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    cmp_ = sub.add_parser("compare", help="compare time-to-target of two traces")
    cmp_.add_argument("--a", required=True)
    cmp_.add_argument("--b", required=True)
    cmp_.add_argument("--target", type=float, required=True)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        _configure_logging()
        if args.command == "run":
            cfg = parse_config(args.config, {"seed": args.seed, "out": args.out})
            code, _ = run_experiment(cfg)
            return code
        report = compare_runs(read_trace(args.a), read_trace(args.b), args.target)
        print(report)
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
