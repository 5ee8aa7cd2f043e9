"""Adaptive ODE integration for data generation and forward-solver baselines.

Two methods are provided:

* ``explicit_rk45`` -- Dormand-Prince 5(4) with local extrapolation and the
  standard quartic continuous extension for output at grid points.
* ``stiff_implicit`` -- the L-stable Rosenbrock 2(3) pair of Shampine and
  Reichelt (the MATLAB ``ode23s`` scheme) with an analytic Jacobian
  assembled from the feature gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, FeatureLibrary, TimeGrid, WendyError

__all__ = [
    "IntegrationError",
    "StepSizeUnderflow",
    "MaxStepsExceeded",
    "IntegratorOptions",
    "solve",
    "integrate",
    "dopri5_fixed",
    "rms_norm",
]


class IntegrationError(WendyError, RuntimeError):
    code = "integration_error"


class StepSizeUnderflow(IntegrationError):
    code = "step_size_underflow"


class MaxStepsExceeded(IntegrationError):
    code = "max_steps_exceeded"


@dataclass(frozen=True)
class IntegratorOptions:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    method: str = "explicit_rk45"
    max_steps: int = 1_000_000

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.method not in ("explicit_rk45", "stiff_implicit"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# difference between 5th and embedded 4th order weights, 7 stages (FSAL)
_E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# quartic dense output, y(t + s h) = y + h * K^T P [s, s^2, s^3, s^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


def _dopri_step(f, y, f0, h):
    K = np.empty((7, y.size))
    K[0] = f0
    for s in range(1, 6):
        K[s] = f(y + h * (_A[s] @ K[:s]))
    y_new = y + h * (_B @ K[:6])
    K[6] = f(y_new)
    return y_new, K


def _err_norm(err, y, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f, y0, f0, span, order, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / (order + 1))
    return min(100 * h0, h1, span)


def _check_step(h, t, y):
    if not np.all(np.isfinite(y)):
        raise StepSizeUnderflow(f"solution became non-finite near t={t:g}")
    if h < 16 * np.finfo(float).eps * max(1.0, abs(t)):
        raise StepSizeUnderflow(f"step size underflow at t={t:g} (h={h:.3g})")


def _run_rk45(f, y0, t_eval, rtol, atol, max_steps):
    t0, tf = t_eval[0], t_eval[-1]
    out = np.empty((t_eval.size, y0.size))
    out[0] = y0
    y = y0.copy()
    f0 = f(y)
    t = t0
    h = _initial_step(f, y, f0, tf - t0, 4, rtol, atol)
    nxt = 1
    steps = 0
    while nxt < t_eval.size:
        if steps >= max_steps:
            raise MaxStepsExceeded(f"exceeded {max_steps} steps at t={t:g}")
        h = min(h, tf - t)
        _check_step(h, t, y)
        y_new, K = _dopri_step(f, y, f0, h)
        steps += 1
        if not np.all(np.isfinite(y_new)) or not np.all(np.isfinite(K)):
            h *= 0.2
            continue
        err = _err_norm(h * (_E @ K), y, y_new, rtol, atol)
        if err <= 1.0:
            t_new = t + h if tf - t - h > 1e-13 * max(1.0, abs(tf)) else tf
            Q = K.T @ _P
            while nxt < t_eval.size and t_eval[nxt] <= t_new:
                s = (t_eval[nxt] - t) / h
                out[nxt] = y + h * (Q @ np.array([s, s * s, s ** 3, s ** 4]))
                nxt += 1
            if t_new == tf:
                out[-1] = y_new
            t, y, f0 = t_new, y_new, K[6]
            fac = 10.0 if err == 0 else min(10.0, 0.9 * err ** -0.2)
            h *= fac
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
    return out


_RD = 1.0 / (2.0 + np.sqrt(2.0))
_E32 = 6.0 + np.sqrt(2.0)


def _run_ros23(f, jac, y0, t_eval, rtol, atol, max_steps):
    t0, tf = t_eval[0], t_eval[-1]
    out = np.empty((t_eval.size, y0.size))
    out[0] = y0
    y = y0.copy()
    F0 = f(y)
    I = np.eye(y.size)
    t = t0
    h = _initial_step(f, y, F0, tf - t0, 2, rtol, atol)
    nxt = 1
    steps = 0
    J = jac(y)
    while nxt < t_eval.size:
        if steps >= max_steps:
            raise MaxStepsExceeded(f"exceeded {max_steps} steps at t={t:g}")
        # land on every output time; the interpolant would only be second order
        target = t_eval[nxt]
        h_step = min(h, target - t)
        _check_step(h_step, t, y)
        steps += 1
        W = I - h_step * _RD * J
        try:
            Winv = np.linalg.inv(W)
        except np.linalg.LinAlgError:
            h = 0.5 * h_step
            continue
        k1 = Winv @ F0
        F1 = f(y + 0.5 * h_step * k1)
        k2 = Winv @ (F1 - k1) + k1
        y_new = y + h_step * k2
        F2 = f(y_new)
        k3 = Winv @ (F2 - _E32 * (k2 - F1) - 2.0 * (k1 - F0))
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(k3))):
            h = 0.2 * h_step
            continue
        err = _err_norm(h_step / 6.0 * (k1 - 2.0 * k2 + k3), y, y_new, rtol, atol)
        if err <= 1.0:
            hit = target - t - h_step <= 1e-13 * max(1.0, abs(target))
            t = target if hit else t + h_step
            y, F0 = y_new, F2
            if hit:
                out[nxt] = y
                nxt += 1
            J = jac(y)
            grow = 5.0 if err == 0 else min(5.0, 0.8 * err ** (-1 / 3))
            # a step clipped by an output time does not limit the next proposal
            h = max(h, h_step * grow) if hit and h_step < h else h_step * grow
        else:
            h = h_step * max(0.2, 0.8 * err ** (-1 / 3))
    return out


def integrate(f, y0, t_eval, *, jac=None, opts: IntegratorOptions | None = None):
    """Integrate the autonomous system ``y' = f(y)`` and sample at ``t_eval``.

    ``t_eval`` must be increasing; its first entry is the initial time.
    """
    opts = opts or IntegratorOptions()
    y0 = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    t_eval = np.asarray(t_eval, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise IntegrationError("initial condition is not finite")
    if t_eval.size < 2 or np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must be strictly increasing with at least two entries")
    if opts.method == "stiff_implicit":
        if jac is None:
            raise ValueError("stiff_implicit needs a Jacobian")
        with np.errstate(over="ignore", invalid="ignore"):
            return _run_ros23(f, jac, y0, t_eval, opts.rel_tol, opts.abs_tol, opts.max_steps)
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_rk45(f, y0, t_eval, opts.rel_tol, opts.abs_tol, opts.max_steps)


def dopri5_fixed(f, y0, T: float, n_steps: int) -> np.ndarray:
    """Fixed-step Dormand-Prince (5th order) solution at ``T``; used for order checks."""
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    h = T / n_steps
    f0 = f(y)
    for _ in range(n_steps):
        y, K = _dopri_step(f, y, f0, h)
        f0 = K[6]
    return y


def solve(lib: FeatureLibrary, w, u0, grid: TimeGrid, opts: IntegratorOptions | None = None) -> Dataset:
    """Simulate ``u' = Theta(u) mat(w)`` from ``u0`` and sample on ``grid``."""
    W = lib.mat(w)
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    if u0.shape != (lib.d,):
        raise ValueError(f"u0 has shape {u0.shape}, expected ({lib.d},)")
    U = integrate(
        lambda u: lib.rhs(u, W),
        u0,
        grid.t,
        jac=lambda u: lib.jacobian(u, W),
        opts=opts,
    )
    if not np.all(np.isfinite(U)):
        raise StepSizeUnderflow("trajectory is not finite on the output grid")
    return Dataset(grid, U)


def rms_norm(U) -> float:
    """Root-mean-square of all entries."""
    U = np.asarray(U, dtype=float)
    if U.size == 0:
        raise ValueError("rms_norm of an empty array")
    return float(np.sqrt(np.mean(U * U)))
