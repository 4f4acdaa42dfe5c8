"""Command-line entry point.

Every run writes its outputs and a ``manifest.txt`` into one directory. The
manifest is a valid config file: ``epinit <command> --config manifest.txt``
reproduces the run.
"""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    REGION_ESTIMATES,
    ascii_key,
    lookup_region,
    realization_seeds,
    run_error_study,
    run_reinit_study,
    simulate_realization,
    study_params,
)
from .config import ConfigError, ExperimentConfig, config_to_text, load_config, make_config
from .estimators import METHODS, EstimationError, estimate_initial_state
from .io import (
    IngestError,
    ingest_incidence,
    read_estimates,
    table_row,
    write_estimates,
    write_kdes,
    write_summary,
    write_table,
    write_trajectories,
)
from .model import STATE_NAMES, ParameterError

log = logging.getLogger("epinit")

OUT_ENV = "EPINIT_OUT"
#: manifest keys that belong to a command rather than to ExperimentConfig
RUN_KEYS = ("command", "source", "method", "county", "data", "start", "estimates", "figures")


def _versions() -> list:
    import matplotlib
    import scipy

    return [f"epinit {__version__}", f"python {platform.python_version()}",
            f"numpy {np.__version__}", f"scipy {scipy.__version__}",
            f"matplotlib {matplotlib.__version__}"]


def _add_common(p: argparse.ArgumentParser):
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="key = value config file (a previous manifest works)")
    g.add_argument("--out", help="output directory (default $EPINIT_OUT/<command>/<timestamp>)")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, help="worker processes for realizations")
    g.add_argument("--d", type=int, help="horizon, last measurement day")
    g.add_argument("--m", type=int, help="initialization day")
    g.add_argument("--k-min", dest="k_min", type=int, help="first day used by the batch methods")
    g.add_argument("--realizations", type=int)
    g.add_argument("--q0", type=float, nargs="+", help="diagonal of Q0 (one value or five)")
    g.add_argument("--r", type=float, help="measurement variance")
    g.add_argument("--population", type=int)
    g.add_argument("--threshold", type=int)
    g.add_argument("--top-fraction", dest="top_fraction", type=float)
    g.add_argument("--s-tol", dest="s_tol", type=float)
    g.add_argument("--max-iters", dest="max_iters", type=int)
    g.add_argument("--nonneg", dest="ols_nonneg", action="store_const", const=True,
                   help="constrain the least-squares estimate to be nonnegative")
    g.add_argument("--params", choices=("default", "prior"),
                   help="use the default parametrization or draw one from the prior")
    g.add_argument("--no-figures", dest="figures", action="store_const", const="false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epinit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"epinit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate the state at day m from incidence data")
    _add_common(p)
    p.add_argument("--data", help="CSV with header date,county,cumulative_cases")
    p.add_argument("--county", action="append", help="county to estimate (repeatable; default all)")
    p.add_argument("--method", choices=("rts", "ols", "nls", "all"))
    p.add_argument("--start-at-threshold", dest="start", action="store_const", const="threshold",
                   help="day 0 = first date the summed count reaches --threshold")

    p = sub.add_parser("simulate", help="simulate synthetic trajectories and measurements")
    _add_common(p)
    p.add_argument("--source", choices=("lti", "ctmc"))

    p = sub.add_parser("study", help="estimation-error study on synthetic data")
    _add_common(p)
    p.add_argument("--source", choices=("lti", "ctmc"))

    p = sub.add_parser("reinit", help="simulate the chain from estimated initial conditions")
    _add_common(p)
    p.add_argument("--county", action="append",
                   help="region of the built-in estimates or of --estimates (repeatable; default all)")
    p.add_argument("--estimates", help="estimate CSV from the estimate command instead of the built-in estimates")
    return parser


_CFG_FLAGS = ("seed", "workers", "d", "m", "k_min", "realizations", "r", "population",
              "threshold", "top_fraction", "s_tol", "max_iters", "ols_nonneg")


def resolve(args) -> tuple:
    """Merge defaults, config file and flags into (ExperimentConfig, run options)."""
    values, run = {}, {}
    if args.config:
        values = load_config(args.config, extra_keys=RUN_KEYS)
        run = values.pop("_run", {})
        if run.get("command", args.command) != args.command:
            raise ConfigError(f"{args.config} is a manifest for '{run['command']}', not '{args.command}'")
    for name in _CFG_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if args.q0 is not None:
        values["q0_diag"] = tuple(args.q0) if len(args.q0) > 1 else args.q0[0]
    if args.params is not None:
        values.pop("param_values", None)
        values["params"] = args.params
    for key in ("source", "method", "data", "start", "estimates", "figures"):
        v = getattr(args, key, None)
        if v is not None:
            run[key] = v
    if getattr(args, "county", None):
        run["county"] = ",".join(args.county)
    run["command"] = args.command
    cfg = make_config(values)
    return cfg, run


def output_dir(command: str, out=None) -> Path:
    if out:
        path = Path(out)
    else:
        root = Path(os.environ.get(OUT_ENV, "out"))
        stamp = dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        path = root / command / stamp
        n = 1
        while path.exists():
            path = root / command / f"{stamp}-{n}"
            n += 1
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(path: Path, cfg: ExperimentConfig, run: dict) -> Path:
    lines = [f"# {v}" for v in _versions()]
    lines += [f"{k} = {run[k]}" for k in RUN_KEYS if k in run]
    text = "\n".join(lines) + "\n" + config_to_text(cfg)
    target = path / "manifest.txt"
    target.write_text(text, encoding="utf-8")
    return target


def _figures(run) -> bool:
    return str(run.get("figures", "true")).lower() not in ("false", "0", "no")


def cmd_estimate(cfg, run, out: Path):
    if not run.get("data"):
        raise ConfigError("estimate needs --data")
    threshold = cfg.threshold if run.get("start") == "threshold" else None
    data = ingest_incidence(run["data"], threshold=threshold)
    counties = run["county"].split(",") if run.get("county") else sorted(data.series)
    method = run.get("method", "all").upper()
    methods = METHODS if method == "ALL" else (method,)
    params = study_params(cfg)
    rows = []
    for county in counties:
        if county not in data.series:
            raise IngestError(f"county {county!r} not in {run['data']}")
        series = data.series[county]
        for mth in methods:
            est = estimate_initial_state(mth, series, params, cfg.noise, cfg)
            rows.append(table_row(county, est))
    write_estimates(out / "estimates.csv", rows)


def cmd_simulate(cfg, run, out: Path):
    source = run.get("source", "lti").upper()
    params = study_params(cfg)
    trajs, meas = [], []
    for ss in realization_seeds(cfg.seed, cfg.realizations):
        traj, y = simulate_realization(source, params, cfg, ss)
        trajs.append(traj)
        meas.append(y.y)
    write_trajectories(out / "trajectories.csv", trajs)
    write_table(out / "measurements.csv", ["realization", "k", "y"],
                ((j, k, float(v)) for j, y in enumerate(meas) for k, v in enumerate(y)))


def cmd_study(cfg, run, out: Path):
    source = run.get("source", "lti").upper()
    res = run_error_study(cfg, source=source)
    write_summary(out / "summary.csv", res.summary())
    write_kdes(out / "kde.csv", f"error-{source.lower()}", res.kdes)
    rows = []
    for rec in res.estimates:
        for method in METHODS:
            if method in rec:
                err = rec[method].x - rec["truth"]
                rows.extend((rec["realization"], method, s, float(err[i])) for i, s in enumerate(STATE_NAMES))
    write_table(out / "errors.csv", ["realization", "method", "state", "error"], rows)
    if _figures(run):
        from .plotting import plot_error_densities

        plot_error_densities(res, out / "error_densities.png")
    log.info("analyzed %d realizations; failures %s", res.analyzed, res.failures)


def cmd_reinit(cfg, run, out: Path):
    if run.get("estimates"):
        table = read_estimates(run["estimates"])
    else:
        table = REGION_ESTIMATES
    counties = run["county"].split(",") if run.get("county") else list(table)
    params = study_params(cfg)
    kde_rows, stat_rows = [], []
    for county in counties:
        try:
            county, estimates = lookup_region(table, county)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        res = run_reinit_study(estimates, params, n=cfg.realizations, d=cfg.d,
                               population=cfg.population, seed=cfg.seed,
                               grid_size=cfg.grid_size, workers=cfg.workers)
        for (method, state), kde in res.kdes.items():
            if kde is not None:
                kde_rows.extend((f"reinit:{county}", method, state, float(g), float(f))
                                for g, f in zip(kde.grid, kde.density))
            vals = res.log_pops[(method, state)]
            q1, q3 = np.percentile(vals, [25, 75])
            stat_rows.append((county, method, state, res.median(method, state), float(q3 - q1)))
        if _figures(run):
            from .plotting import plot_reinit_densities

            slug = ascii_key(county)
            plot_reinit_densities(res, out / f"reinit_{slug}.png", title=f"{county}: day {cfg.d}")
    write_table(out / "kde.csv", ["study", "method", "state", "grid", "density"], kde_rows)
    write_table(out / "reinit_stats.csv", ["county", "method", "state", "kde_median", "iqr"], stat_rows)


HANDLERS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "study": cmd_study, "reinit": cmd_reinit}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, run = resolve(args)
        out = output_dir(args.command, args.out)
        write_manifest(out, cfg, run)
        HANDLERS[args.command](cfg, run, out)
    except (ConfigError, IngestError, EstimationError, ParameterError, ValueError, OSError) as exc:
        print(f"epinit {args.command}: {type(exc).__module__}: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
