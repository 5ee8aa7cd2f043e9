"""Experiment harness: error metrics, the forward-solver NLS baseline and sweeps."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .core import Dataset, TimeGrid, WendyError
from .estimator import fit_weak
from .integrate import IntegrationError, IntegratorOptions, integrate
from .irls import IRLSOptions
from .models import ModelSpec, add_noise, catalog, truth
from .testfn import TestFunctionOptions

__all__ = [
    "InitialPointInfeasible",
    "AllStartsFailed",
    "LMOptions",
    "LMResult",
    "FSNLSOptions",
    "FSNLSResult",
    "ExperimentConfig",
    "TrialRecord",
    "ALL_ESTIMATORS",
    "metric_E2",
    "metric_EFS",
    "simulate_model",
    "lm_optimize",
    "fsnls",
    "run_trial",
    "run_experiment",
    "aggregate",
    "write_trials_csv",
    "write_long_csv",
    "summary_document",
]

ALL_ESTIMATORS = ("ols", "wendy", "fsnls", "wendy_fsnls")
SCHEMA_VERSION = 1


class InitialPointInfeasible(WendyError, ValueError):
    code = "initial_point_infeasible"


class AllStartsFailed(WendyError, RuntimeError):
    code = "all_starts_failed"


def metric_E2(w_hat, w_star) -> float:
    """Relative coefficient error ``||w_hat - w_star|| / ||w_star||``."""
    w_hat = np.asarray(w_hat, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    if w_hat.shape != w_star.shape:
        raise ValueError(f"length mismatch: {w_hat.shape} vs {w_star.shape}")
    return float(np.linalg.norm(w_hat - w_star) / np.linalg.norm(w_star))


def simulate_model(spec: ModelSpec, w, u0, t, opts: IntegratorOptions) -> np.ndarray:
    lib = spec.lib
    W = lib.mat(w)
    return integrate(lambda u: lib.rhs(u, W), u0, t, jac=lambda u: lib.jacobian(u, W), opts=opts)


_EFS_OPTS = IntegratorOptions(1e-12, 1e-12, "explicit_rk45", max_steps=200_000)


def metric_EFS(w_hat, spec: ModelSpec, grid: TimeGrid, truth_ds: Dataset,
               opts: IntegratorOptions = _EFS_OPTS) -> float:
    """Relative forward-simulation error from the exact initial state.

    Solver failure, including blow-up, returns ``inf`` (reported as diverged).
    """
    U_star = truth_ds.U
    try:
        U_hat = simulate_model(spec, w_hat, U_star[0], grid.t, opts)
    except IntegrationError:
        return math.inf
    if not np.all(np.isfinite(U_hat)):
        return math.inf
    return float(np.linalg.norm(U_star - U_hat) / np.linalg.norm(U_star))


@dataclass(frozen=True)
class LMOptions:
    max_evals: int = 2000
    max_iter: int = 500
    min_step: float = 1e-8
    lambda0: float = 1e-3


@dataclass
class LMResult:
    w: np.ndarray
    cost: float
    n_evals: int
    n_iter: int
    status: str


def _fd_jacobian(fun, w, r, evals):
    J = np.empty((r.size, w.size))
    for j in range(w.size):
        h = max(1e-7, 1e-7 * abs(w[j]))
        wj = w.copy()
        wj[j] += h
        rj = fun(wj)
        evals[0] += 1
        if rj is None:
            # fall back to a backward difference at a blow-up boundary
            wj[j] = w[j] - h
            rj = fun(wj)
            evals[0] += 1
            if rj is None:
                return None
            J[:, j] = (r - rj) / h
        else:
            J[:, j] = (rj - r) / h
    return J


def lm_optimize(residual_fn, w0, opts: LMOptions | None = None) -> LMResult:
    """Levenberg-Marquardt with Marquardt scaling and forward-difference Jacobian.

    ``residual_fn`` may return ``None`` or a non-finite vector to flag an
    infeasible point; such trial steps are rejected.
    """
    opts = opts or LMOptions()
    evals = [0]

    def fun(w):
        try:
            r = residual_fn(w)
        except (IntegrationError, FloatingPointError, np.linalg.LinAlgError):
            return None
        if r is None:
            return None
        r = np.asarray(r, dtype=float)
        return r if np.all(np.isfinite(r)) else None

    w = np.array(w0, dtype=float)
    r = fun(w)
    evals[0] += 1
    if r is None:
        raise InitialPointInfeasible("residual is not finite at the initial point")
    cost = 0.5 * float(r @ r)
    lam = opts.lambda0
    status = "max_iter"
    it = 0
    J = None
    while it < opts.max_iter:
        if evals[0] >= opts.max_evals:
            status = "max_evals"
            break
        if J is None:
            J = _fd_jacobian(fun, w, r, evals)
            if J is None:
                status = "jacobian_failed"
                break
        g = J.T @ r
        # relative gradient test: the residual is orthogonal to the Jacobian range
        if np.linalg.norm(g) <= 1e-8 * np.linalg.norm(J) * np.linalg.norm(r):
            status = "gradient"
            break
        it += 1
        A = J.T @ J
        D = np.maximum(np.diag(A), 1e-12 * max(np.max(np.diag(A)), 1e-300))
        accepted = False
        while evals[0] < opts.max_evals:
            try:
                step = np.linalg.solve(A + lam * np.diag(D), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            w_try = w + step
            r_try = fun(w_try)
            evals[0] += 1
            c_try = math.inf if r_try is None else 0.5 * float(r_try @ r_try)
            if c_try < cost:
                w, r, cost = w_try, r_try, c_try
                lam = max(lam / 10, 1e-12)
                accepted = True
                J = None
                break
            lam *= 10
            if lam > 1e16:
                break
        if not accepted:
            status = "max_evals" if evals[0] >= opts.max_evals else "no_progress"
            break
        if np.linalg.norm(step) <= opts.min_step * (opts.min_step + np.linalg.norm(w)):
            status = "min_step"
            break
        if cost == 0.0:
            status = "zero_residual"
            break
    return LMResult(w, cost, evals[0], it, status)


@dataclass(frozen=True)
class FSNLSOptions:
    n_starts: int = 5
    spread: float = 0.25
    draw: str = "uniform"
    sim_tol: float = 1e-6
    # trial points whose simulation needs more steps are treated as infeasible
    max_steps: int = 5_000
    lm: LMOptions = field(default_factory=LMOptions)

    def __post_init__(self):
        if self.draw not in ("uniform", "normal"):
            raise ValueError("draw must be 'uniform' or 'normal'")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class FSNLSResult:
    w_hat: np.ndarray
    cost: float
    n_iters: int
    n_evals: int
    stop_reason: str
    n_failed_starts: int
    walltime_seconds: float


def _initial_guesses(w_star, opts: FSNLSOptions, rng) -> np.ndarray:
    sd = opts.spread * np.abs(w_star)
    if opts.draw == "uniform":
        half = np.sqrt(3.0) * sd
        W0 = rng.uniform(w_star - half, w_star + half, size=(opts.n_starts, w_star.size))
    else:
        W0 = w_star + sd * rng.standard_normal((opts.n_starts, w_star.size))
    # keep the sign of w_star; a spread of 0.25 sqrt(3) never flips it for the uniform draw
    return np.where(np.sign(W0) == np.sign(w_star), W0, w_star)


def fsnls(spec: ModelSpec, data: Dataset, strategy: str = "batch5", w_init=None,
          opts: FSNLSOptions | None = None, seed: int = 0) -> FSNLSResult:
    """Fit ``w`` by minimizing ``||simulate(w) - U||`` from the true initial state.

    ``strategy="batch5"`` draws starts around ``w_star`` and keeps the best;
    ``strategy="wendy_init"`` starts once from ``w_init``.
    """
    opts = opts or FSNLSOptions()
    method = "stiff_implicit" if spec.stiff else "explicit_rk45"
    sim = IntegratorOptions(opts.sim_tol, opts.sim_tol, method, max_steps=opts.max_steps)
    t = data.grid.t
    U = data.U

    def residual(w):
        return (simulate_model(spec, w, spec.u0, t, sim) - U).ravel(order="F")

    if strategy == "batch5":
        starts = _initial_guesses(np.asarray(spec.w_star, float), opts, np.random.default_rng(seed))
    elif strategy == "wendy_init":
        if w_init is None:
            raise ValueError("wendy_init needs w_init")
        starts = np.atleast_2d(np.asarray(w_init, dtype=float))
    else:
        raise ValueError(f"unknown FSNLS strategy {strategy!r}")

    t0 = time.perf_counter()
    best = None
    failed = 0
    for w0 in starts:
        try:
            res = lm_optimize(residual, w0, opts.lm)
        except InitialPointInfeasible:
            failed += 1
            continue
        if best is None or res.cost < best.cost:
            best = res
    wall = time.perf_counter() - t0
    if best is None:
        raise AllStartsFailed(f"all {len(starts)} FSNLS starts failed to simulate")
    return FSNLSResult(best.w, best.cost, best.n_iter, best.n_evals, best.status, failed, wall)


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    noise_ratios: tuple = (0.1,)
    subsample_factors: tuple = (1,)
    n_trials: int = 20
    seed_base: int = 0
    estimators: tuple = ("ols", "wendy")
    metrics: tuple = ("E2", "EFS")
    testfn: TestFunctionOptions = field(default_factory=TestFunctionOptions)
    irls: IRLSOptions = field(default_factory=IRLSOptions)
    integrator: IntegratorOptions = field(
        default_factory=lambda: IntegratorOptions(1e-12, 1e-12, max_steps=200_000))
    fsnls: FSNLSOptions = field(default_factory=FSNLSOptions)

    def __post_init__(self):
        catalog(self.model)
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        bad = set(self.estimators) - set(ALL_ESTIMATORS)
        if bad or not self.estimators:
            raise ValueError(f"estimators must be a non-empty subset of {ALL_ESTIMATORS}")
        if set(self.metrics) - {"E2", "EFS"}:
            raise ValueError("metrics must be a subset of ('E2', 'EFS')")
        if any(r < 0 for r in self.noise_ratios):
            raise ValueError("noise ratios must be non-negative")
        if any(int(f) < 1 for f in self.subsample_factors):
            raise ValueError("subsample factors must be >= 1")


@dataclass
class TrialRecord:
    model: str
    M: int
    sigma_nr: float
    estimator: str
    seed: int
    E2: float
    EFS: float
    walltime_seconds: float
    n_iters: int
    stop_reason: str
    w_hat: list = field(default_factory=list)

    def __post_init__(self):
        if self.E2 < 0 or self.EFS < 0:
            raise ValueError("metrics must be non-negative")

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.E2)

    @property
    def diverged(self) -> bool:
        return not math.isfinite(self.EFS)


def run_trial(cfg: ExperimentConfig, sigma_nr: float, factor: int, trial: int) -> list:
    """All estimators of one (noise, factor, trial) cell; failures become sentinel rows."""
    spec = catalog(cfg.model)
    M = spec.finest_M // int(factor)
    clean = truth(spec.name, M)
    seed = cfg.seed_base + trial
    ds = add_noise(clean, sigma_nr, seed)
    rows = []
    w_wendy, t_wendy = None, 0.0
    nan_w = [math.nan] * spec.lib.n_params

    def record(est, w, wall, n_it, reason):
        e2 = metric_E2(w, spec.w_star) if "E2" in cfg.metrics else math.nan
        efs = metric_EFS(w, spec, clean.grid, clean, cfg.integrator) if "EFS" in cfg.metrics else math.nan
        rows.append(TrialRecord(spec.name, M, float(sigma_nr), est, seed, e2, efs, wall,
                                int(n_it), reason, [float(v) for v in w]))

    def fail(est, exc):
        code = getattr(exc, "code", type(exc).__name__)
        rows.append(TrialRecord(spec.name, M, float(sigma_nr), est, seed, math.inf, math.inf,
                                math.nan, 0, f"error:{code}", nan_w))

    need_wendy = "wendy" in cfg.estimators or "wendy_fsnls" in cfg.estimators
    for est in ("ols", "wendy"):
        if est == "ols" and "ols" not in cfg.estimators or est == "wendy" and not need_wendy:
            continue
        t0 = time.perf_counter()
        try:
            fit = fit_weak(ds, spec.lib, est, cfg.testfn, cfg.irls)
        except (WendyError, np.linalg.LinAlgError, ValueError) as exc:
            if est in cfg.estimators:
                fail(est, exc)
            continue
        wall = time.perf_counter() - t0
        if est == "wendy":
            w_wendy, t_wendy = fit.result.w_hat, wall
        if est in cfg.estimators:
            record(est, fit.result.w_hat, wall, fit.result.n_iters, fit.result.stop_reason)

    for est in ("fsnls", "wendy_fsnls"):
        if est not in cfg.estimators:
            continue
        if est == "wendy_fsnls" and w_wendy is None:
            fail(est, WendyError("wendy estimate unavailable"))
            continue
        try:
            if est == "fsnls":
                res = fsnls(spec, ds, "batch5", opts=cfg.fsnls, seed=seed)
                wall = res.walltime_seconds
            else:
                res = fsnls(spec, ds, "wendy_init", w_init=w_wendy, opts=cfg.fsnls)
                wall = res.walltime_seconds + t_wendy
        except (WendyError, ValueError) as exc:
            fail(est, exc)
            continue
        record(est, res.w_hat, wall, res.n_iters, res.stop_reason)
    return rows


def _trial_job(args):
    return run_trial(*args)


def _sort_key(r: TrialRecord):
    return (r.M, r.sigma_nr, ALL_ESTIMATORS.index(r.estimator), r.seed)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list:
    """Run the full sweep; returns trial records in canonical order."""
    catalog(cfg.model)
    truth(cfg.model)  # generate once, before timing
    tasks = [(cfg, float(nr), int(f), k) for nr in cfg.noise_ratios
             for f in cfg.subsample_factors for k in range(cfg.n_trials)]
    if jobs is None or jobs <= 0:
        jobs = os.cpu_count() or 1
    if jobs == 1 or len(tasks) == 1:
        out = [r for t in tasks for r in _trial_job(t)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = [r for rows in ex.map(_trial_job, tasks) for r in rows]
    return sorted(out, key=_sort_key)


def _stats(values) -> dict:
    v = np.array([x for x in values if math.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"mean": None, "median": None}
    return {"mean": float(np.mean(v)), "median": float(np.median(v))}


def aggregate(records) -> list:
    """Per-cell mean/median of E2 and EFS over finite values, plus failure rates.

    Cells are ``(model, M, sigma_nr, estimator)``. When both OLS and WENDy
    ran, the WENDy cell carries ``pct_drop_E2``, the median drop from OLS
    as a percentage of the OLS median.
    """
    cells: dict = {}
    for r in records:
        cells.setdefault((r.model, r.M, r.sigma_nr, r.estimator), []).append(r)
    out = []
    for (model, M, nr, est), rows in sorted(
            cells.items(), key=lambda kv: (kv[0][1], kv[0][2], ALL_ESTIMATORS.index(kv[0][3]))):
        e2, efs = _stats(r.E2 for r in rows), _stats(r.EFS for r in rows)
        out.append({
            "model": model, "M": M, "sigma_nr": nr, "estimator": est, "n_trials": len(rows),
            "mean_E2": e2["mean"], "median_E2": e2["median"],
            "mean_EFS": efs["mean"], "median_EFS": efs["median"],
            "failure_rate": sum(r.failed for r in rows) / len(rows),
            "diverged_rate": sum(r.diverged and not math.isnan(r.EFS) for r in rows) / len(rows),
        })
    index = {(c["model"], c["M"], c["sigma_nr"], c["estimator"]): c for c in out}
    for c in out:
        if c["estimator"] != "wendy":
            continue
        base = index.get((c["model"], c["M"], c["sigma_nr"], "ols"))
        if base and base["median_E2"] and c["median_E2"] is not None:
            c["pct_drop_E2"] = 100.0 * (base["median_E2"] - c["median_E2"]) / base["median_E2"]
    return out


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    for k in ("noise_ratios", "subsample_factors", "estimators", "metrics"):
        d[k] = list(d[k])
    return d


def summary_document(cfg: ExperimentConfig, records) -> dict:
    """JSON-ready summary; walltimes are left to the trials CSV so reruns match exactly."""
    return _jsonable({
        "schema_version": SCHEMA_VERSION,
        "config": config_dict(cfg),
        "cells": aggregate(records),
    })


_TRIAL_COLS = [f.name for f in fields(TrialRecord)]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return " ".join(repr(float(x)) for x in v)
    return str(v)


def write_trials_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_TRIAL_COLS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in _TRIAL_COLS])


def write_long_csv(path, records) -> None:
    """Plot-ready long format: ``model, M, sigma_nr, estimator, metric, value``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "M", "sigma_nr", "estimator", "metric", "value"])
        for r in records:
            for metric in ("E2", "EFS", "walltime_seconds"):
                w.writerow([r.model, r.M, repr(r.sigma_nr), r.estimator, metric,
                            repr(getattr(r, metric))])


def write_summary_json(path, cfg: ExperimentConfig, records) -> None:
    with open(path, "w") as fh:
        json.dump(summary_document(cfg, records), fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)
