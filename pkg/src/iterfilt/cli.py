"""Command-line front end: simulate | pfilter | mif | score | profile.

One JSON config drives every command; CLI flags override the config.
All time series are CSV (header row, '.' decimal); all results are JSON
carrying the fully resolved config and seed, so any output can be
reproduced from itself.  Likelihoods are reported in log space only.
Files are written atomically (temp file + rename).  Replicates and
profile grid points run concurrently; ITERFILT_THREADS caps the worker
threads (0 or unset = auto) without affecting results.

Exit codes: 0 success, 2 config/schema error, 3 numerical failure
(degeneracy or singularity), 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .core import (
    ModelEvaluationError,
    ObservationSeries,
    RngStream,
    TimeGrid,
    simulate,
)
from .ifilter import (
    MifAbortError,
    SingularVarianceError,
    check_schedule,
    mif_run,
    score_estimate,
)
from .kernel import KernelSpec
from .models import BuiltModel, build_model
from .smc import FilterDegeneracyError, particle_filter

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


# --- deterministic serialization helpers -----------------------------------


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return repr(float(value))


def _jsonify(value):
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonify(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    return value


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: str, payload: dict) -> None:
    text = json.dumps(_jsonify(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"
    _atomic_write(path, text)


def _write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([cell if isinstance(cell, str) else _fmt(cell) for cell in row])
    _atomic_write(path, buf.getvalue())


def read_observations(path: str, t0: float) -> ObservationSeries:
    """Read a `time,y1,...` CSV into an observation series.

    A row whose y-cells are all empty marks a missing observation.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"data file {path} is empty") from None
        if not header or header[0] != "time" or len(header) < 2:
            raise ConfigError(
                f"data file {path} must have a header 'time,y1,...', got {header!r}"
            )
        d_y = len(header) - 1
        times, values, missing = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d_y + 1:
                raise ConfigError(f"{path}:{lineno}: expected {d_y + 1} columns, got {len(row)}")
            try:
                times.append(float(row[0]))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad time value {row[0]!r}") from None
            cells = [c.strip() for c in row[1:]]
            if all(c == "" for c in cells):
                values.append([0.0] * d_y)
                missing.append(True)
            elif any(c == "" for c in cells):
                raise ConfigError(f"{path}:{lineno}: partially missing rows are not supported")
            else:
                try:
                    values.append([float(c) for c in cells])
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: bad observation value") from None
                missing.append(False)
    if not times:
        raise ConfigError(f"data file {path} contains no observation rows")
    try:
        grid = TimeGrid(t0=t0, times=np.asarray(times))
        return ObservationSeries(
            grid=grid,
            values=np.asarray(values),
            missing=np.asarray(missing) if any(missing) else None,
        )
    except ValueError as exc:
        raise ConfigError(f"data file {path}: {exc}") from exc


# --- shared run plumbing -----------------------------------------------------


def _thread_count() -> int:
    raw = os.environ.get("ITERFILT_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"ITERFILT_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("ITERFILT_THREADS must be >= 0")
    return n if n > 0 else min(32, os.cpu_count() or 1)


def _parallel_map(fn, items):
    """Map preserving order; results are independent of worker count."""
    items = list(items)
    if len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(_thread_count(), len(items))) as pool:
        return list(pool.map(fn, items))


def _ensure_outdir(cfg: RunConfig) -> str:
    os.makedirs(cfg.output, exist_ok=True)
    return cfg.output


def _build(cfg: RunConfig) -> BuiltModel:
    try:
        return build_model(cfg.model, cfg.parameters, cfg.model_options)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _kernel_spec(cfg: RunConfig, dim: int) -> KernelSpec:
    if cfg.sigma_diag is None:
        return KernelSpec.identity(dim, truncation_radius=cfg.truncation_radius)
    if len(cfg.sigma_diag) != dim:
        raise ConfigError(
            f"kernel sigma_diag has {len(cfg.sigma_diag)} entries but the model "
            f"has {dim} free parameters"
        )
    return KernelSpec.diagonal(cfg.sigma_diag, truncation_radius=cfg.truncation_radius)


def _require_exact(built: BuiltModel):
    if built.exact is None:
        raise ConfigError(
            f"--exact needs a model with an exact reference; {built.name!r} has none"
        )
    return built.exact


def _log_mean_exp(values: np.ndarray) -> float:
    m = float(np.max(values))
    return m + float(np.log(np.mean(np.exp(values - m))))


def _base_payload(command: str, cfg: RunConfig) -> dict:
    return {"command": command, "config": cfg.resolved(), "seed": cfg.seed}


# --- commands ----------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args) -> int:
    built = _build(cfg)
    grid = TimeGrid.uniform(cfg.n_obs, cfg.dt, cfg.t0)
    states, series = simulate(
        built.model, built.theta_start, grid, RngStream(cfg.seed).child("simulate")
    )
    outdir = _ensure_outdir(cfg)
    obs_path = os.path.join(outdir, "observations.csv")
    states_path = os.path.join(outdir, "states.csv")
    _write_csv(
        obs_path,
        ["time"] + [f"y{i + 1}" for i in range(series.dim_obs)],
        (
            [grid.times[n]] + list(series.values[n])
            for n in range(grid.n_obs)
        ),
    )
    all_times = np.concatenate([[grid.t0], grid.times])
    _write_csv(
        states_path,
        ["time"] + [f"x{i + 1}" for i in range(built.model.dim_state)],
        ([all_times[n]] + list(states[n]) for n in range(grid.n_obs + 1)),
    )
    print(f"simulate: wrote {obs_path} and {states_path}")
    return EXIT_OK


def _check_data(built: BuiltModel, series: ObservationSeries) -> None:
    if series.dim_obs != built.model.dim_obs:
        raise ConfigError(
            f"data has dimension {series.dim_obs} but model {built.name!r} "
            f"observes dimension {built.model.dim_obs}"
        )


def cmd_pfilter(cfg: RunConfig, args) -> int:
    built = _build(cfg)
    series = read_observations(args.data, cfg.t0)
    _check_data(built, series)
    root = RngStream(cfg.seed)

    def one(replicate: int):
        return particle_filter(
            built.model,
            series,
            theta=built.theta_start,
            n_particles=cfg.particles,
            resampler=cfg.resampler,
            rng=root.child("pfilter", replicate),
        )

    results = _parallel_map(one, range(cfg.replicates))
    logliks = np.array([r.loglik for r in results])
    payload = _base_payload("pfilter", cfg)
    payload.update(
        {
            "n_particles": cfg.particles,
            "replicates": cfg.replicates,
            "logliks": logliks,
            "log_mean_exp_loglik": _log_mean_exp(logliks),
            "cond_loglik": results[0].cond_loglik,
            "ess": results[0].ess,
            "state_filter_means": results[0].state_filter_means,
        }
    )
    if args.exact:
        exact = _require_exact(built)
        exact_loglik = exact.loglik(built.theta_start, series)
        payload["exact_loglik"] = exact_loglik
        payload["log_mean_exp_minus_exact"] = payload["log_mean_exp_loglik"] - exact_loglik
    outdir = _ensure_outdir(cfg)
    _write_json(os.path.join(outdir, "pfilter_result.json"), payload)

    d_x = built.model.dim_state
    header = ["replicate", "step", "time", "cond_loglik", "ess"] + [
        f"x{i + 1}_mean" for i in range(d_x)
    ]

    def rows():
        for rep, res in enumerate(results):
            for n in range(series.n_obs):
                yield [rep, n + 1, series.grid.times[n], res.cond_loglik[n], res.ess[n]] + list(
                    res.state_filter_means[n + 1]
                )

    _write_csv(os.path.join(outdir, "pfilter_trace.csv"), header, rows())
    print(f"pfilter: log_mean_exp_loglik = {payload['log_mean_exp_loglik']:.6f}")
    return EXIT_OK


def cmd_score(cfg: RunConfig, args) -> int:
    built = _build(cfg)
    series = read_observations(args.data, cfg.t0)
    _check_data(built, series)
    kernel = _kernel_spec(cfg, built.model.dim_params)
    settings = cfg.build_schedule().iteration(0)
    estimate = score_estimate(
        built.model,
        built.theta_start,
        series,
        kernel,
        sigma=settings.sigma,
        tau=settings.tau,
        n_particles=cfg.particles,
        resampler=cfg.resampler,
        rng=RngStream(cfg.seed).child("score"),
    )
    payload = _base_payload("score", cfg)
    payload.update(
        {
            "free_names": list(built.free_names),
            "theta_unconstrained": built.theta_start,
            "sigma": settings.sigma,
            "tau": settings.tau,
            "n_particles": cfg.particles,
            "score": estimate.value,
            "per_step_terms": estimate.per_step_terms,
            "loglik": estimate.filter_result.loglik,
        }
    )
    if args.exact:
        exact = _require_exact(built)
        oracle_score = exact.score(built.theta_start, series)
        denom = float(np.linalg.norm(estimate.value) * np.linalg.norm(oracle_score))
        payload["exact_score"] = oracle_score
        payload["cosine_similarity"] = (
            float(np.dot(estimate.value, oracle_score) / denom) if denom > 0 else 0.0
        )
    outdir = _ensure_outdir(cfg)
    _write_json(os.path.join(outdir, "score_result.json"), payload)
    print(f"score: {np.array2string(estimate.value, precision=6)}")
    return EXIT_OK


def cmd_mif(cfg: RunConfig, args) -> int:
    built = _build(cfg)
    series = read_observations(args.data, cfg.t0)
    _check_data(built, series)
    kernel = _kernel_spec(cfg, built.model.dim_params)
    schedule = cfg.build_schedule()
    aborted = False
    error = None
    try:
        result = mif_run(
            built.model,
            series,
            built.theta_start,
            kernel,
            schedule,
            resampler=cfg.resampler,
            rng=RngStream(cfg.seed).child("mif"),
        )
    except MifAbortError as exc:
        result = exc.partial
        aborted = True
        error = str(exc)

    report = check_schedule(schedule)
    payload = _base_payload("mif", cfg)
    payload.update(
        {
            "free_names": list(built.free_names),
            "aborted": aborted,
            "error": error,
            "completed_iterations": result.n_iterations_completed,
            "trajectory_unconstrained": result.trajectory,
            "trajectory_natural": result.trajectory_natural,
            "logliks": result.logliks,
            "scores": result.scores,
            "schedule_conditions": [
                {"name": c.name, "satisfied": c.satisfied, "detail": c.detail}
                for c in report.conditions
            ],
        }
    )
    outdir = _ensure_outdir(cfg)
    _write_json(os.path.join(outdir, "mif_result.json"), payload)

    names = built.free_names
    header = (
        ["iteration"]
        + [f"{n}_unconstrained" for n in names]
        + [f"{n}_natural" for n in names]
        + ["loglik"]
    )

    def rows():
        n_rows = result.trajectory.shape[0]
        for m in range(n_rows):
            loglik = result.logliks[m] if m < result.logliks.shape[0] else None
            yield (
                [m]
                + list(result.trajectory[m])
                + list(result.trajectory_natural[m])
                + [loglik]
            )

    _write_csv(os.path.join(outdir, "mif_trace.csv"), header, rows())
    if aborted:
        print(f"mif: aborted at iteration {result.n_iterations_completed}: {error}", file=sys.stderr)
        return EXIT_NUMERIC
    final = np.array2string(result.trajectory_natural[-1], precision=6)
    print(f"mif: completed {result.n_iterations_completed} iterations, final (natural) {final}")
    return EXIT_OK


def _parse_grid(spec: str) -> np.ndarray:
    try:
        if ":" in spec:
            lo, hi, count = spec.split(":")
            values = np.linspace(float(lo), float(hi), int(count))
        else:
            values = np.array([float(v) for v in spec.split(",") if v.strip() != ""])
    except ValueError:
        raise ConfigError(
            f"--grid must be 'lo:hi:count' or comma-separated values, got {spec!r}"
        ) from None
    if values.size < 1:
        raise ConfigError("--grid produced no points")
    return values


def cmd_profile(cfg: RunConfig, args) -> int:
    built = _build(cfg)
    series = read_observations(args.data, cfg.t0)
    _check_data(built, series)
    if args.coordinate not in built.free_names:
        raise ConfigError(
            f"--coordinate must be a free parameter ({', '.join(built.free_names)}), "
            f"got {args.coordinate!r}"
        )
    coord = built.free_names.index(args.coordinate)
    grid_values = _parse_grid(args.grid)
    transform = built.model.transform
    base_nat = transform.to_natural(built.theta_start)
    root = RngStream(cfg.seed)

    points = []
    for value in grid_values:
        nat = base_nat.copy()
        nat[coord] = value
        try:
            points.append(transform.to_unconstrained(nat))
        except ValueError as exc:
            raise ConfigError(f"grid value {value!r} outside parameter domain: {exc}") from exc

    def one(task):
        point_idx, replicate = task
        res = particle_filter(
            built.model,
            series,
            theta=points[point_idx],
            n_particles=cfg.particles,
            resampler=cfg.resampler,
            rng=root.child("profile", point_idx, replicate),
        )
        return res.loglik

    tasks = [(p, r) for p in range(len(points)) for r in range(cfg.replicates)]
    logliks = np.array(_parallel_map(one, tasks)).reshape(len(points), cfg.replicates)
    estimates = [_log_mean_exp(logliks[p]) for p in range(len(points))]
    sds = [
        float(np.std(logliks[p], ddof=1)) if cfg.replicates > 1 else 0.0
        for p in range(len(points))
    ]
    outdir = _ensure_outdir(cfg)
    _write_csv(
        os.path.join(outdir, "profile.csv"),
        [args.coordinate, "loglik", "loglik_sd"],
        ([grid_values[p], estimates[p], sds[p]] for p in range(len(points))),
    )
    print(f"profile: wrote {len(points)} grid points (likelihood slice, other "
          "coordinates held fixed)")
    return EXIT_OK


# --- argument parsing and dispatch -------------------------------------------


def _add_common(parser, data=False, exact=False, profile=False):
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    if data:
        parser.add_argument("--data", required=True, help="observation CSV (time,y1,...)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--particles", type=int, help="override the particle count")
    parser.add_argument("--replicates", type=int, help="override the replicate count")
    parser.add_argument("--output", help="override the output directory")
    parser.add_argument(
        "--resampler", choices=["multinomial", "systematic"], help="override the resampler"
    )
    if exact:
        parser.add_argument(
            "--exact",
            action="store_true",
            help="also report the exact reference (models with one only)",
        )
    if profile:
        parser.add_argument("--coordinate", required=True, help="free parameter to sweep")
        parser.add_argument(
            "--grid", required=True, help="natural-scale grid: 'lo:hi:count' or 'v1,v2,...'"
        )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iterfilt",
        description="Simulation-based likelihood inference for partially observed "
        "Markov processes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("simulate", help="simulate data from the configured model"))
    _add_common(sub.add_parser("pfilter", help="run replicated particle filters"), data=True, exact=True)
    _add_common(sub.add_parser("mif", help="run the iterated-filtering search"), data=True)
    _add_common(sub.add_parser("score", help="estimate the log-likelihood gradient"), data=True, exact=True)
    _add_common(
        sub.add_parser("profile", help="likelihood slice along one coordinate"),
        data=True,
        profile=True,
    )
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.particles is not None:
        if args.particles < 1:
            raise ConfigError("--particles must be >= 1")
        cfg.particles = int(args.particles)
        if "particles" in cfg.schedule:
            cfg.schedule["particles"] = int(args.particles)
    if args.replicates is not None:
        if args.replicates < 1:
            raise ConfigError("--replicates must be >= 1")
        cfg.replicates = int(args.replicates)
    if args.output is not None:
        cfg.output = args.output
    if args.resampler is not None:
        cfg.resampler = args.resampler
    return cfg


_COMMANDS = {
    "simulate": cmd_simulate,
    "pfilter": cmd_pfilter,
    "mif": cmd_mif,
    "score": cmd_score,
    "profile": cmd_profile,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"iterfilt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FilterDegeneracyError, SingularVarianceError, MifAbortError, ModelEvaluationError) as exc:
        print(f"iterfilt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"iterfilt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"iterfilt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
