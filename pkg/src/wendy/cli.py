"""Command-line interface.

Exit codes: 0 on success, 2 on invalid input or configuration, 1 on a
runtime failure (solver breakdown, I/O).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (SCHEMA_VERSION, AllStartsFailed, fsnls, metric_E2, metric_EFS,
                    run_experiment, summary_document, write_long_csv, write_summary_json,
                    write_trials_csv)
from .config import default_config, load_config, merge, to_experiment
from .core import Dataset, TimeGrid, WendyError
from .estimator import fit_weak
from .integrate import IntegrationError
from .irls import CholeskyFailure, IRLSOptions, confidence_intervals
from .models import MODEL_NAMES, add_noise, catalog, parse_library, truth
from .testfn import TestFunctionOptions

__all__ = ["main", "ParseError", "read_csv", "write_csv"]


class ParseError(WendyError, ValueError):
    code = "parse_error"


def write_csv(path, ds: Dataset) -> None:
    """Header ``t,u1..ud``; values written with ``repr`` so they read back exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"u{i + 1}" for i in range(ds.d)])
        for t, row in zip(ds.t, ds.U):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "t":
        raise ParseError(f"{path}: header must be 't,u1,...,ud', got {','.join(header)!r}")
    data = []
    for k, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ParseError(f"{path}: line {k} has {len(r)} fields, expected {len(header)}")
        try:
            data.append([float(c) for c in r])
        except ValueError:
            raise ParseError(f"{path}: line {k} has a non-numeric field") from None
    arr = np.array(data, dtype=float)
    if arr.shape[0] < 3:
        raise ParseError(f"{path}: need at least 3 samples")
    grid = TimeGrid.from_times(arr[:, 0])
    return Dataset(grid, arr[:, 1:])


def _truth_path(out: Path) -> Path:
    name = out.name[:-4] if out.name.endswith(".csv") else out.name
    return out.with_name(name + ".truth.csv")


def _dump(doc, out=None):
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _finite(x):
    return float(x) if math.isfinite(x) else ("inf" if x > 0 else None)


# ---- commands ---------------------------------------------------------------

def cmd_models(args):
    cards = [catalog(n).card() for n in MODEL_NAMES]
    if args.json:
        _dump({"schema_version": SCHEMA_VERSION, "models": cards})
    else:
        for c in cards:
            print(f"{c['name']:<16} d={c['d']}  params={c['n_params']:<3} T={c['T']:<5g} "
                  f"finest_M={c['finest_M']:<5} {c['library']}")
    return 0


def cmd_simulate(args):
    spec = catalog(args.model)
    clean = truth(spec.name, args.M)
    noisy = add_noise(clean, args.noise, args.seed)
    out = Path(args.out)
    write_csv(out, noisy)
    write_csv(_truth_path(out), clean)
    print(f"wrote {out} and {_truth_path(out)}", file=sys.stderr)
    return 0


def _resolve(args) -> dict:
    cfg = load_config(args.config) if getattr(args, "config", None) else default_config()
    over = {}
    for key in ("eta", "s", "stride", "levels", "radius"):
        v = getattr(args, key, None)
        if v is not None:
            over.setdefault("testfn", {})[key] = v
    for key in ("alpha", "tau_fp", "tau_sw", "n0", "max_its"):
        v = getattr(args, key, None)
        if v is not None:
            over.setdefault("irls", {})[key] = v
    if getattr(args, "trials", None) is not None:
        over["n_trials"] = args.trials
    if getattr(args, "jobs", None) is not None:
        over["jobs"] = args.jobs
    return merge(cfg, over)


def _library_for(args, d):
    if args.model:
        spec = catalog(args.model)
        if spec.lib.d != d:
            raise ParseError(f"data has {d} states but model {spec.name} has {spec.lib.d}")
        return spec.lib, spec
    if args.library:
        return parse_library(args.library, d), None
    raise ParseError("give --model or --library")


def _estimate_doc(ds, lib, spec, estimator, tf, opts, level):
    t0 = time.perf_counter()
    fit = fit_weak(ds, lib, estimator, tf, opts)
    wall = time.perf_counter() - t0
    res = fit.result
    lo, hi = confidence_intervals(res, level)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "estimator": estimator,
        "parameters": lib.param_names(),
        "w_hat": res.w_hat.tolist(),
        "stdx": res.stdx.tolist(),
        "confidence_level": level,
        "ci_lower": lo.tolist(),
        "ci_upper": hi.tolist(),
        "sigma_hat": res.sigma_hat,
        "n_iters": res.n_iters,
        "stop_reason": res.stop_reason,
        "min_radius": fit.min_radius,
        "K": fit.basis.K,
        "alpha_used": res.alpha_used,
        "walltime_seconds": wall,
    }
    if spec is not None:
        doc["model"] = spec.name
        doc["E2"] = metric_E2(res.w_hat, spec.w_star)
    return doc, fit


def cmd_estimate(args):
    cfg = _resolve(args)
    if args.print_config:
        _dump(cfg)
        return 0
    ds = read_csv(args.data)
    lib, spec = _library_for(args, ds.d)
    tf = TestFunctionOptions(**cfg["testfn"])
    opts = IRLSOptions(**cfg["irls"])
    doc, _ = _estimate_doc(ds, lib, spec, args.estimator, tf, opts, args.level)
    _dump(doc, args.out)
    return 0


def cmd_benchmark(args):
    cfg = _resolve(args)
    if args.print_config:
        _dump(cfg)
        return 0
    exp = to_experiment(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recs = run_experiment(exp, jobs=cfg["jobs"] if cfg["jobs"] is not None else 0)
    write_trials_csv(out / "trials.csv", recs)
    write_summary_json(out / "summary.json", exp, recs)
    write_long_csv(out / "long.csv", recs)
    if not args.quiet:
        for c in summary_document(exp, recs)["cells"]:
            drop = c.get("pct_drop_E2")
            print(f"{c['model']} M={c['M']} nr={c['sigma_nr']:g} {c['estimator']:<12} "
                  f"median E2={c['median_E2']} median EFS={c['median_EFS']} "
                  f"fail={c['failure_rate']:.2f}" + (f" drop={drop:.1f}%" if drop is not None else ""))
    return 0


def cmd_compare(args):
    """Run several estimators on one dataset and report them side by side."""
    cfg = _resolve(args)
    if args.print_config:
        _dump(cfg)
        return 0
    ds = read_csv(args.data)
    lib, spec = _library_for(args, ds.d)
    ref = read_csv(args.truth) if args.truth else None
    tf = TestFunctionOptions(**cfg["testfn"])
    opts = IRLSOptions(**cfg["irls"])
    ests = [e.strip() for e in args.estimators.split(",") if e.strip()]
    rows = []
    w_wendy = None
    for est in ests:
        row = {"estimator": est}
        try:
            if est in ("ols", "wendy"):
                doc, fit = _estimate_doc(ds, lib, spec, est, tf, opts, 0.95)
                w = fit.result.w_hat
                row.update(walltime_seconds=doc["walltime_seconds"], n_iters=doc["n_iters"],
                           stop_reason=doc["stop_reason"])
                if est == "wendy":
                    w_wendy, t_wendy = w, doc["walltime_seconds"]
            elif est in ("fsnls", "wendy_fsnls"):
                if spec is None:
                    raise ParseError("FSNLS needs --model (true initial state and w_star)")
                if est == "fsnls":
                    r = fsnls(spec, ds, "batch5", seed=args.seed)
                    wall = r.walltime_seconds
                else:
                    if w_wendy is None:
                        doc, fit = _estimate_doc(ds, lib, spec, "wendy", tf, opts, 0.95)
                        w_wendy, t_wendy = fit.result.w_hat, doc["walltime_seconds"]
                    r = fsnls(spec, ds, "wendy_init", w_init=w_wendy)
                    wall = r.walltime_seconds + t_wendy
                w = r.w_hat
                row.update(walltime_seconds=wall, n_iters=r.n_iters, stop_reason=r.stop_reason)
            else:
                raise ParseError(f"unknown estimator {est!r}")
        except (CholeskyFailure, IntegrationError, AllStartsFailed) as exc:
            row.update(error=exc.code, message=str(exc))
            rows.append(row)
            continue
        row["w_hat"] = [float(v) for v in w]
        if spec is not None:
            row["E2"] = metric_E2(w, spec.w_star)
        if ref is not None and spec is not None:
            row["EFS"] = _finite(metric_EFS(w, spec, ref.grid, ref))
        rows.append(row)
    doc = {"schema_version": SCHEMA_VERSION, "parameters": lib.param_names(), "results": rows}
    if spec is not None:
        doc["w_star"] = spec.w_star.tolist()
    _dump(doc, args.out)
    return 0


# ---- parser -----------------------------------------------------------------

def _add_tuning(p):
    g = p.add_argument_group("tuning (defaults from the config file or built-in)")
    g.add_argument("--config", help="JSON run configuration")
    g.add_argument("--eta", type=float)
    g.add_argument("--s", type=float, help="coarsening factor for the radius search")
    g.add_argument("--stride", type=int)
    g.add_argument("--levels", type=int)
    g.add_argument("--radius", type=int, help="fix the minimum radius instead of selecting it")
    g.add_argument("--alpha", type=float)
    g.add_argument("--tau-fp", dest="tau_fp", type=float)
    g.add_argument("--tau-sw", dest="tau_sw", type=float)
    g.add_argument("--n0", type=int)
    g.add_argument("--max-its", dest="max_its", type=int)
    g.add_argument("--print-config", action="store_true",
                   help="print the fully resolved configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wendy", description="Weak-form ODE parameter estimation")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("models", help="benchmark model catalog")
    msub = m.add_subparsers(dest="action", required=True)
    ml = msub.add_parser("list", help="list catalog models")
    ml.add_argument("--json", action="store_true", help="emit model cards as JSON")
    ml.set_defaults(func=cmd_models)

    s = sub.add_parser("simulate", help="write noisy and clean trajectories as CSV")
    s.add_argument("model")
    s.add_argument("--M", type=int, default=None, help="number of intervals (default: finest)")
    s.add_argument("--noise", type=float, default=0.0, help="noise ratio sigma_NR")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate parameters from a CSV trajectory")
    e.add_argument("data")
    e.add_argument("--model")
    e.add_argument("--library", help='e.g. "u1,u1*u2; u2,u1*u2"')
    e.add_argument("--estimator", choices=("wendy", "ols"), default="wendy")
    e.add_argument("--level", type=float, default=0.95, help="confidence level")
    e.add_argument("--out")
    _add_tuning(e)
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("benchmark", help="run a noise/resolution sweep")
    b.add_argument("config")
    b.add_argument("--out-dir", required=True)
    b.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    b.add_argument("--trials", type=int, help="override n_trials")
    b.add_argument("--quiet", action="store_true")
    b.add_argument("--print-config", action="store_true")
    b.set_defaults(func=cmd_benchmark)

    c = sub.add_parser("compare", help="run several estimators on one dataset")
    c.add_argument("data")
    c.add_argument("--model")
    c.add_argument("--library")
    c.add_argument("--estimators", default="ols,wendy")
    c.add_argument("--truth", help="clean trajectory CSV for the forward-simulation error")
    c.add_argument("--seed", type=int, default=0, help="seed for FSNLS starting points")
    c.add_argument("--out")
    _add_tuning(c)
    c.set_defaults(func=cmd_compare)
    return p


_RUNTIME = (CholeskyFailure, IntegrationError, AllStartsFailed, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _RUNTIME as exc:
        code, status, msg = getattr(exc, "code", type(exc).__name__), 1, str(exc)
    except (WendyError, ValueError, KeyError, TypeError) as exc:
        code, status = getattr(exc, "code", "invalid_input"), 2
        msg = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
    print(json.dumps({"error": code, "message": msg}), file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
