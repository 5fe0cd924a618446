"""Command-line front end: ``fbtur run --config run.yaml``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 invariant violation.
"""
import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from . import _backend
from .analysis import RATE_COLUMNS, analyze
from .config import parse_config
from .errors import ConfigError, FbturError, InvalidModel
from .model import load_model, thermal_qubit
from .models import ClockParams, build_clock, random_model
from .thermo import CHECK_TOL, ThermoReport, second_law_comparison
from .trajectories import run_ensemble, write_trajectories_csv
from .dynamics import write_timeseries_csv

log = logging.getLogger("fbtur")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4

META_COLUMNS = (
    "mode",
    "index",
    "model",
    "param_name",
    "param_value",
    "seed",
    "dim",
    "feedback_kind",
    "status",
    "error",
    "checks_passed",
)
PATH_COLUMNS = ("min_sigma_rate_path", "min_sigma_gap_path", "second_law_ours", "second_law_prior")
REPORT_COLUMNS = META_COLUMNS + tuple(ThermoReport.field_names()) + RATE_COLUMNS + PATH_COLUMNS
MC_COLUMNS = ("quantity", "fcs", "mc", "se", "z", "pass")
SECOND_LAW_TOL = 1e-10
Z_MAX = 3.0


def build_model(name, params):
    """Model named in a config, with its parameters."""
    params = dict(params)
    if name == "clock":
        return build_clock(ClockParams(**params))
    if name == "thermal_qubit":
        return thermal_qubit(**params)
    if name == "random":
        return random_model(**params)
    if name == "file":
        return load_model(params["path"])
    raise ConfigError(f"unknown model {name!r}", "model")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def write_csv(rows, columns, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_json_safe(obj), fh, indent=1)


def evaluate_point(spec, cfg, meta, timeseries_path=None):
    """Run one model through :func:`analyze` and flatten the outcome into a row.

    Numerical failures are caught and reported with ``status = failed``.
    """
    row = dict.fromkeys(REPORT_COLUMNS)
    row.update(meta)
    row["dim"] = spec.dim
    kinds = sorted({fb.kind for fb in spec.feedback.values()})
    row["feedback_kind"] = "+".join(kinds)
    try:
        n = cfg.integrator.n_steps(cfg.tau)
        res = analyze(spec, cfg.tau, cfg.integrator, cfg.initial_state, sample_every=max(1, n // 100))
        samples = res.final.samples
        big_sigma_rate = samples[:, 8] + samples[:, 3] - samples[:, 4]
        ours, prior = second_law_comparison(spec, res.initial_state, cfg.fuzz.second_law_dt)
        row.update(res.row())
        row["min_sigma_rate_path"] = float(big_sigma_rate.min())
        row["min_sigma_gap_path"] = float((big_sigma_rate - samples[:, 5]).min())
        row["second_law_ours"] = ours
        row["second_law_prior"] = prior
        ok = (
            res.report.passed
            and row["min_sigma_rate_path"] >= -CHECK_TOL
            and row["min_sigma_gap_path"] >= -CHECK_TOL
            and row["sigma_rate_total"] >= -CHECK_TOL
            and ours <= prior + SECOND_LAW_TOL
        )
        row["checks_passed"] = bool(ok)
        row["status"] = "ok"
        if timeseries_path is not None:
            write_timeseries_csv(samples, timeseries_path)
    except (FbturError, ArithmeticError, ValueError, TypeError) as exc:
        if isinstance(exc, InvalidModel):
            log.error("invalid model: %s", exc)
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        row["checks_passed"] = None
    return row


def _status(rows):
    if any(r["checks_passed"] is False for r in rows):
        return EXIT_INVARIANT
    if any(r["status"] != "ok" for r in rows):
        return EXIT_NUMERICAL
    return EXIT_OK


def _emit_rows(cfg, rows, out_dir, stem):
    if "csv" in cfg.output.formats:
        write_csv(rows, REPORT_COLUMNS, os.path.join(out_dir, f"{stem}.csv"))
    if "json" in cfg.output.formats:
        payload = rows[0] if len(rows) == 1 and stem == "report" else rows
        write_json(payload, os.path.join(out_dir, f"{stem}.json"))


def run_single(cfg, out_dir, threads):
    spec = build_model(cfg.model, cfg.params)
    ts = os.path.join(out_dir, "timeseries.csv") if cfg.output.timeseries else None
    row = evaluate_point(spec, cfg, {"mode": "single", "index": 0, "model": cfg.model}, ts)
    _emit_rows(cfg, [row], out_dir, "report")
    return _status([row])


def run_sweep(cfg, out_dir, threads):
    values = cfg.sweep.values()
    name = cfg.sweep.param

    def point(item):
        i, v = item
        meta = {"mode": "sweep", "index": i, "model": cfg.model, "param_name": name, "param_value": float(v)}
        try:
            spec = build_model(cfg.model, {**cfg.params, name: float(v)})
        except FbturError as exc:
            row = dict.fromkeys(REPORT_COLUMNS)
            row.update(meta, status="failed", error=f"{type(exc).__name__}: {exc}")
            return row
        return evaluate_point(spec, cfg, meta)

    items = list(enumerate(values))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(point, items))
    else:
        rows = [point(it) for it in items]
    _emit_rows(cfg, rows, out_dir, "sweep")
    return _status(rows)


def fuzz_models(fz):
    """The ``(seed, dim, n_pairs, kind)`` tuples tested in fuzz mode."""
    out = []
    for i in range(fz.n_models):
        dim = fz.dims[i % len(fz.dims)]
        n_pairs = fz.n_pairs[(i // len(fz.dims)) % len(fz.n_pairs)]
        kind = fz.feedback_kinds[i % len(fz.feedback_kinds)]
        out.append((fz.base_seed + i, dim, n_pairs, kind))
    return out


def run_fuzz(cfg, out_dir, threads):
    cases = fuzz_models(cfg.fuzz)
    fcfg = replace(cfg, initial_state="model")

    def point(item):
        i, (seed, dim, n_pairs, kind) = item
        spec = random_model(dim, n_pairs, seed, kind)
        return evaluate_point(spec, fcfg, {"mode": "fuzz", "index": i, "model": "random", "seed": seed})

    items = list(enumerate(cases))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(point, items))
    else:
        rows = [point(it) for it in items]
    _emit_rows(cfg, rows, out_dir, "fuzz")
    violations = sum(r["checks_passed"] is False for r in rows)
    failed = sum(r["status"] != "ok" for r in rows)
    summary = {"models_tested": len(rows), "violations": violations, "failed": failed}
    write_json(summary, os.path.join(out_dir, "fuzz_summary.json"))
    log.info("fuzz: %d models, %d violations, %d numerical failures", len(rows), violations, failed)
    return _status(rows)


def run_mc_validate(cfg, out_dir, threads):
    spec = build_model(cfg.model, cfg.params)
    res = analyze(spec, cfg.tau, cfg.integrator, cfg.initial_state)
    ens = run_ensemble(
        spec.with_initial_state(res.initial_state),
        cfg.tau,
        dt=cfg.mc.dt,
        n_traj=cfg.mc.n_traj,
        base_seed=cfg.mc.base_seed,
        threads=threads,
        keep_records=cfg.output.trajectories,
        path=cfg.mc.path,
    )
    rep = res.report
    rows = []
    for name, ref, est, se in (
        ("mean_J", rep.j_mean, ens.mean_J, ens.se_mean),
        ("var_J", rep.j_var, ens.var_J, ens.se_var),
        ("activity", rep.activity, ens.mean_jumps, ens.se_jumps),
    ):
        z = (est - ref) / se if se > 0 else (0.0 if est == ref else math.inf)
        rows.append({"quantity": name, "fcs": ref, "mc": est, "se": se, "z": z, "pass": abs(z) <= Z_MAX})
    if "csv" in cfg.output.formats:
        write_csv(rows, MC_COLUMNS, os.path.join(out_dir, "mc_validate.csv"))
    if "json" in cfg.output.formats:
        write_json(
            {
                "n_traj": ens.n_traj,
                "dt": ens.dt,
                "base_seed": ens.base_seed,
                "max_jump_prob": ens.max_jump_prob,
                "histogram": {"edges": list(ens.histogram[0]), "counts": list(ens.histogram[1])},
                "rows": rows,
            },
            os.path.join(out_dir, "mc_validate.json"),
        )
    if ens.records is not None:
        write_trajectories_csv(ens.records, os.path.join(out_dir, "trajectories.csv"))
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_INVARIANT


RUNNERS = {"single": run_single, "sweep": run_sweep, "fuzz": run_fuzz, "mc_validate": run_mc_validate}


def run(cfg, out_dir=None, threads=None):
    """Execute a parsed :class:`~fbtur.config.RunConfig`; returns the exit code."""
    out_dir = out_dir or cfg.output.dir
    threads = threads or cfg.threads
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
        fh.write(cfg.emit())
    t0 = time.perf_counter()
    try:
        code = RUNNERS[cfg.mode](cfg, out_dir, threads)
    except ConfigError:
        raise
    except FbturError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL
    log.info("%s finished in %.2f s with exit code %d (backend %s)", cfg.mode, time.perf_counter() - t0, code, _backend.NAME)
    return code


def main(argv=None):
    parser = argparse.ArgumentParser(prog="fbtur", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a run configuration")
    p_run.add_argument("--config", required=True, help="YAML run configuration")
    p_run.add_argument("--out", help="output directory (overrides output.dir)")
    p_run.add_argument("--threads", type=int, help="worker threads (overrides threads)")
    p_run.add_argument("--seed", type=int, help="base seed for Monte Carlo and fuzz runs")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads must be a positive integer", "--threads")
        return run(cfg, args.out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
