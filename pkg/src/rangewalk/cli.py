"""Command-line experiment runner.

Every subcommand writes ``summary.json`` plus one or more CSV series into
the output directory.  Both depend only on the resolved configuration and
the master seed; wall-clock time and the worker count go to a separate
``timing.json`` so that runs with different parallelism compare
byte-for-byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import estimators as est
from .environment import Environment, environment_seed
from .graph import InsufficientCutTimesError, ball, volume
from .resistance import resistance_to_ball_complement
from .walk import HorizonError, Kernel, evolve_distribution, expected_exit_time

log = logging.getLogger("rangewalk")

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

SUBCOMMANDS = (
    "constants",
    "heatkernel",
    "displacement",
    "exit-times",
    "volume",
    "scaling-test",
    "cuttimes",
    "d4-diagnostics",
)

# smallest dyadic level used in fits
FIT_MIN_LEVEL = 6


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class ExperimentConfig:
    command: str
    dim: int = 5
    horizon: int = 20_000
    envs: int = 100
    nmax: int = 4096
    trials: int = 100
    seed: int = 0
    workers: int = 1
    out: str = "."
    mode: str = "uniform"
    lambda_grid: tuple = est.DEFAULT_LAMBDA_GRID

    def validate(self):
        if self.command not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.command!r}")
        for name in ("dim", "horizon", "envs", "nmax", "trials", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.mode not in ("uniform", "weighted"):
            raise ConfigError(f"mode must be 'uniform' or 'weighted', got {self.mode!r}")
        if not self.lambda_grid or min(self.lambda_grid) <= 0:
            raise ConfigError("lambda grid must hold positive values")
        if self.command in ("constants", "scaling-test") and self.dim < 5:
            raise ConfigError("block constants require d >= 5")
        if self.command == "d4-diagnostics" and self.dim != 4:
            raise ConfigError("d4 diagnostics require d = 4")
        if self.dim < 2:
            raise ConfigError("range-graph experiments require d >= 2")
        return self

    def echo(self):
        """Configuration fields that determine the results."""
        d = dataclasses.asdict(self)
        d.pop("workers")
        d.pop("out")
        d["lambda_grid"] = [float(v) for v in self.lambda_grid]
        return d


_INT_FIELDS = {"dim", "horizon", "envs", "nmax", "trials", "seed", "workers"}

COMMAND_DEFAULTS = {
    "d4-diagnostics": {"dim": 4, "nmax": 1000},
    "cuttimes": {"dim": 4, "nmax": 1 << 16},
    "scaling-test": {"nmax": 10_000},
    "exit-times": {"nmax": 256},
    "volume": {"nmax": 1024},
    "displacement": {"nmax": 1024},
}


def _coerce(key, value):
    if key in _INT_FIELDS:
        return int(value)
    if key == "lambda_grid":
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        return tuple(float(v) for v in value)
    return value


def read_config_file(path):
    """Parse a plain ``key = value`` file (``#`` starts a comment)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in ExperimentConfig.__dataclass_fields__ or key == "command":
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="rangewalk", description=__doc__.splitlines()[0])
    p.add_argument("command", help="one of: " + ", ".join(SUBCOMMANDS))
    p.add_argument("--dim", type=int)
    p.add_argument("--envs", type=int, help="number of environments (paths)")
    p.add_argument("--horizon", type=int, help="path length for block sampling")
    p.add_argument("--nmax", type=int, help="walk horizon, radius or level, by subcommand")
    p.add_argument("--trials", type=int, help="walkers per environment")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory (default $RANGEWALK_OUT or .)")
    p.add_argument("--mode", choices=("uniform", "weighted"))
    p.add_argument("--lambda-grid", dest="lambda_grid")
    p.add_argument("--config", help="key=value file; flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args):
    values = {"out": os.environ.get("RANGEWALK_OUT", ".")}
    values.update(COMMAND_DEFAULTS.get(args.command, {}))
    if args.config:
        values.update(read_config_file(args.config))
    for key in ExperimentConfig.__dataclass_fields__:
        v = getattr(args, key, None)
        if key != "command" and v is not None:
            values[key] = v
    try:
        values = {k: _coerce(k, v) for k, v in values.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(command=args.command, **values).validate()


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def emit_series(out_dir, name, header, rows):
    """Write a CSV with a header line, 17 significant digits and LF endings."""
    path = Path(out_dir) / f"{name}.csv"
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row {row!r} does not match header {header!r}")
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if dataclasses.is_dataclass(obj):
        return _jsonable(dataclasses.asdict(obj))
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


@contextmanager
def task_map(workers):
    """A map over tasks whose results come back in task order."""
    if workers <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        yield lambda fn, tasks: ex.map(fn, tasks, chunksize=1)


def _mean_se(a):
    a = np.asarray(a, dtype=np.float64)
    m = len(a)
    mean = a.mean(axis=0)
    se = a.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.full_like(mean, np.nan)
    return mean, se


def dyadic(lo, hi):
    """Powers of two in ``[lo, hi]``."""
    out = []
    k = max(0, math.ceil(math.log2(max(lo, 1))))
    while 2**k <= hi:
        out.append(2**k)
        k += 1
    return np.array(out, dtype=np.int64)


def _try_fit(n, y, model="plain", p=None, groups=None):
    try:
        return est.dimension_fit(n, y, model=model, p=p, groups=groups)
    except (est.DegenerateFitError, ValueError) as exc:
        return {"skipped": str(exc)}


# ---------------------------------------------------------------------------
# tasks (module level so that worker processes can unpickle them)


def _env(cfg, i, min_guard):
    return Environment.generate(cfg["dim"], environment_seed(cfg["seed"], i), min_guard_distance=min_guard)


def _heatkernel_task(args):
    cfg, i = args
    env = _env(cfg, i, (cfg["nmax"] + 1) // 2)
    return evolve_distribution(env.network(cfg["mode"]), env.root, cfg["nmax"], guard_distance=env.guard_distance)


def _displacement_task(args):
    cfg, i = args
    n = cfg["nmax"]
    env = _env(cfg, i, n + 1)
    kern = Kernel(env.network(cfg["mode"]))
    rng = np.random.default_rng(environment_seed(cfg["seed"], i, 1))
    times = set(dyadic(1, n).tolist()) | {n}
    pts = env.graph.points.astype(np.float64)
    norm = np.sqrt((pts**2).sum(axis=1))
    v = np.full(cfg["trials"], env.root, dtype=np.int64)
    running = np.zeros(len(v))
    out = []
    for t in range(1, n + 1):
        v = kern.step(v, rng.random(len(v)))
        running = np.maximum(running, norm[v])
        if t in times:
            gd = env.distances[v].astype(np.float64)
            out.append([t, np.mean(norm[v] ** 2), gd.mean(), np.mean(gd**2), running.mean(), running[0]])
    return np.array(out)


def _exit_task(args):
    cfg, i = args
    radii = dyadic(1, cfg["nmax"])
    env = _env(cfg, i, int(radii[-1]) + 1)
    net = env.network(cfg["mode"])
    rows = []
    for r in radii:
        e = expected_exit_time(net, env.root, int(r), guard_distance=env.guard_distance)
        bound = resistance_to_ball_complement(net, env.root, int(r)) * volume(
            env.graph, ball(env.graph, env.root, int(r)), weighted=net.mode == "crossing"
        )
        rows.append((e, bound))
    return np.array(rows)


def _volume_task(args):
    cfg, i = args
    radii = dyadic(1, cfg["nmax"])
    env = _env(cfg, i, int(radii[-1]) + 1)
    weighted = cfg["mode"] == "weighted"
    dist = env.distances
    order = np.sort(dist)
    mu = (env.graph.crossings if weighted else env.graph.degree)[np.argsort(dist, kind="stable")]
    cum = np.cumsum(mu)
    return np.array([cum[np.searchsorted(order, r, side="right") - 1] for r in radii], dtype=np.float64)


def _endpoint_task(args):
    cfg, i = args
    dist, pos = est.walk_endpoint(cfg["dim"], environment_seed(cfg["seed"], i, 2), cfg["nmax"], cfg["mode"])
    return dist, float(pos[0])


def _d4_task(args):
    cfg, i = args
    n = cfg["nmax"]
    seed = environment_seed(cfg["seed"], i)
    row = est.d4_environment_statistics(cfg["dim"], seed, n, cfg["mode"])
    env = Environment.generate(cfg["dim"], seed, min_guard_distance=n + 1)
    p = evolve_distribution(env.network(cfg["mode"]), env.root, 2 * n, guard_distance=env.guard_distance)
    row["return_probability"] = float(p[2 * n])
    return row


# ---------------------------------------------------------------------------
# subcommands


def run_constants(cfg, mapper):
    samples = est.sample_blocks(cfg.dim, cfg.envs, cfg.horizon, cfg.seed, cfg.mode, map_fn=mapper)
    e = est.estimate_constants(samples)
    problems = list(e.violations(cfg.dim))
    if cfg.mode == "uniform":
        if np.any(samples.resistance < 1 - 1e-9) or np.any(samples.resistance > samples.distance + 1e-9):
            problems.append("1 <= R <= d per block")
    if np.any(samples.distance > samples.duration):
        problems.append("d <= T per block")
    if np.any(samples.return_time < 1 - 1e-9):
        problems.append("E H_1 >= 1 per anchor")
    rows = [(k, v["value"], v["stderr"]) for k, v in e.as_dict().items()]
    emit_series(cfg.out, "constants", ("name", "value", "stderr"), rows)
    summary = e.as_dict()
    summary.update(n_blocks=e.n_blocks, n_environments=e.n_groups)
    return summary, problems


def run_heatkernel(cfg, mapper):
    series = np.array(list(mapper(_heatkernel_task, [(_plain(cfg), i) for i in range(cfg.envs)])))
    problems = []
    if np.any(series[:, 1::2] != 0):
        problems.append("non-zero odd-step return probability")
    if np.any(series < 0) or np.any(series > 1 + 1e-12):
        problems.append("return probability outside [0, 1]")
    mean, se = _mean_se(series)
    steps = np.arange(0, cfg.nmax + 1, 2)
    emit_series(cfg.out, "heatkernel", ("n", "p_return", "stderr"),
                [(int(n), mean[n], se[n]) for n in steps])
    half = dyadic(2**FIT_MIN_LEVEL, cfg.nmax // 2)
    summary = {"fit_n": half}
    if len(half):
        q = series[:, 2 * half]
        scaled = np.sqrt(half) * q
        summary["flatness_ratio_le_3"] = float(np.mean(scaled.max(1) / scaled.min(1) <= 3))
        plain = _try_fit(half, np.exp(np.log(q).mean(axis=0)))
        summary["fit_plain"] = plain
        if isinstance(plain, est.SeriesFit):
            summary["spectral_dimension"] = est.spectral_dimension(plain)
        groups = np.repeat(np.arange(cfg.envs), len(half))
        summary["fit_log_corrected"] = _try_fit(np.tile(half, cfg.envs), q.ravel(), "log-corrected", -0.5, groups)
    return summary, problems


def run_displacement(cfg, mapper):
    per_env = np.array(list(mapper(_displacement_task, [(_plain(cfg), i) for i in range(cfg.envs)])))
    n = per_env[0, :, 0].astype(np.int64)
    mean, se = _mean_se(per_env[:, :, 1:])
    emit_series(cfg.out, "displacement",
                ("n", "mean_sq_disp", "mean_graph_dist", "stderr_sq", "stderr_gd"),
                [(int(n[k]), mean[k, 0], mean[k, 1], se[k, 0], se[k, 1]) for k in range(len(n))])
    keep = n >= 2**4
    fit = _try_fit(n[keep], mean[keep, 0])
    summary = {"fit_mean_sq_disp": fit, "fit_mean_sq_graph_dist": _try_fit(n[keep], mean[keep, 2])}
    if isinstance(fit, est.SeriesFit):
        summary["walk_dimension"] = est.walk_dimension(fit)
    summary["graph_distance_variance_slope"] = {"value": float(mean[-1, 2] / n[-1]), "stderr": float(se[-1, 2] / n[-1])}
    rows = [est.window_coverage(per_env[:, k, 5], "max_displacement", int(n[k]), cfg.lambda_grid)
            for k in range(len(n)) if n[k] >= 2]
    emit_series(cfg.out, "windows", ("quantity", "n", "lambda", "coverage"),
                [(r.quantity, r.n, r.lam, r.coverage) for r in rows])
    return summary, []


def run_exit_times(cfg, mapper):
    per_env = np.array(list(mapper(_exit_task, [(_plain(cfg), i) for i in range(cfg.envs)])))
    radii = dyadic(1, cfg.nmax)
    problems = []
    if np.any(per_env[:, :, 0] > per_env[:, :, 1] * (1 + 1e-9)):
        problems.append("E tau > R(0, B^c) mu(B)")
    mean, se = _mean_se(per_env[:, :, 0])
    emit_series(cfg.out, "exit_times", ("r", "mean_exit_time", "stderr"),
                [(int(r), mean[k], se[k]) for k, r in enumerate(radii)])
    keep = radii >= 4
    groups = np.repeat(np.arange(cfg.envs), keep.sum())
    return {
        "fit_plain": _try_fit(radii[keep], mean[keep]),
        "fit_log_corrected": _try_fit(np.tile(radii[keep], cfg.envs), per_env[:, keep, 0].ravel(),
                                      "log-corrected", 2.0, groups),
    }, problems


def run_volume(cfg, mapper):
    per_env = np.array(list(mapper(_volume_task, [(_plain(cfg), i) for i in range(cfg.envs)])))
    radii = dyadic(1, cfg.nmax)
    mean, se = _mean_se(per_env)
    emit_series(cfg.out, "volume", ("r", "volume", "stderr"),
                [(int(r), mean[k], se[k]) for k, r in enumerate(radii)])
    keep = radii >= 4
    groups = np.repeat(np.arange(cfg.envs), keep.sum())
    return {
        "fit_plain": _try_fit(radii[keep], mean[keep]),
        "fit_log_corrected": _try_fit(np.tile(radii[keep], cfg.envs), per_env[:, keep].ravel(),
                                      "log-corrected", 1.0, groups),
    }, []


def run_scaling_test(cfg, mapper):
    samples = est.sample_blocks(cfg.dim, cfg.envs, cfg.horizon, environment_seed(cfg.seed, 0, 3), cfg.mode,
                                map_fn=mapper)
    e = est.estimate_constants(samples)
    ends = np.array(list(mapper(_endpoint_task, [(_plain(cfg), i) for i in range(cfg.envs)])))
    n = cfg.nmax
    dist = ends[:, 0] / math.sqrt(n)
    coord = ends[:, 1] / n**0.25
    emit_series(cfg.out, "scaling_samples", ("env", "scaled_distance", "scaled_coordinate"),
                [(i, dist[i], coord[i]) for i in range(cfg.envs)])
    summary = {"kappa1": e.as_dict()["kappa1"], "kappa2": e.as_dict()["kappa2"], "n": n}
    if cfg.envs >= 1000:
        summary["quenched_ks"] = est.scaling_limit_test(dist, e["kappa1"], lattice_spacing=2 / math.sqrt(n))
        summary["annealed_ks"] = est.annealed_limit_test(coord, e["kappa2"], cfg.dim, lattice_spacing=n**-0.25)
    else:
        summary["ks_skipped"] = "needs at least 1000 environments"
    return summary, []


def run_cuttimes(cfg, mapper):
    levels = dyadic(2**4, cfg.nmax)
    if len(levels) < 2:
        raise ConfigError("cuttimes needs nmax >= 32")
    tasks = [(cfg.dim, environment_seed(cfg.seed, i), tuple(int(v) for v in levels)) for i in range(cfg.envs)]
    rep = est.cut_time_growth(np.array(list(mapper(est._growth_task, tasks))), levels)
    emit_series(cfg.out, "cuttimes", ("n", "linear", "log_corrected", "linear_iqr", "log_corrected_iqr"),
                [(int(levels[k]), rep.linear[k], rep.log_corrected[k], rep.linear_iqr[k], rep.log_corrected_iqr[k])
                 for k in range(len(levels))])
    return {
        "linear_drift": rep.linear_drift,
        "log_corrected_drift": rep.log_corrected_drift,
        "log_corrected_spread_top3": rep.spread(3) if len(levels) >= 3 else None,
        "linear_spread_top3": rep.spread(3, "linear") if len(levels) >= 3 else None,
    }, []


def run_d4(cfg, mapper):
    rows = list(mapper(_d4_task, [(_plain(cfg), i) for i in range(cfg.envs)]))
    report = est.d4_window_checks(rows, cfg.nmax, cfg.lambda_grid)
    emit_series(cfg.out, "windows", ("quantity", "n", "lambda", "coverage"),
                [(r.quantity, r.n, r.lam, r.coverage) for r in report])
    return {"windows": report}, []


RUNNERS = {
    "constants": run_constants,
    "heatkernel": run_heatkernel,
    "displacement": run_displacement,
    "exit-times": run_exit_times,
    "volume": run_volume,
    "scaling-test": run_scaling_test,
    "cuttimes": run_cuttimes,
    "d4-diagnostics": run_d4,
}


def _plain(cfg):
    return {"dim": cfg.dim, "seed": cfg.seed, "nmax": cfg.nmax, "trials": cfg.trials, "mode": cfg.mode}


def run(cfg):
    """Run one experiment; returns the exit status."""
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create output directory %s: %s", out, exc)
        return EXIT_IO
    t0 = time.perf_counter()
    try:
        with task_map(cfg.workers) as mapper:
            summary, problems = RUNNERS[cfg.command](cfg, mapper)
        record = {
            "experiment": cfg.command,
            "config": cfg.echo(),
            "seed": cfg.seed,
            "version": _version(),
            "censored": 0,
            "invariant_violations": problems,
            "results": summary,
        }
        write_json(out / "summary.json", record)
        write_json(out / "timing.json", {"wall_clock_seconds": time.perf_counter() - t0, "workers": cfg.workers})
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    if problems:
        for p in problems:
            log.error("invariant violated: %s", p)
        return EXIT_INVARIANT
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"rangewalk: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg)
    except (ConfigError, HorizonError, InsufficientCutTimesError) as exc:
        print(f"rangewalk: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
