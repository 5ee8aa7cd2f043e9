"""Statistical helpers: Shapiro-Wilk, Fornberg finite-difference weights, changepoints."""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
from scipy import stats as _sps

from .core import WendyError

__all__ = [
    "SampleTooSmall",
    "DegenerateSample",
    "SeriesTooShort",
    "SWResult",
    "shapiro_wilk",
    "fd_weights",
    "changepoint",
]


class SampleTooSmall(WendyError, ValueError):
    code = "sample_too_small"


class DegenerateSample(WendyError, ValueError):
    code = "degenerate_sample"


class SeriesTooShort(WendyError, ValueError):
    code = "series_too_short"


class SWResult(NamedTuple):
    W: float
    p: float


def shapiro_wilk(sample) -> SWResult:
    """Shapiro-Wilk W statistic and p-value (Royston's approximation).

    The sample is standardized first; W and p are affine invariant so this
    only guards the computation against badly scaled residuals.
    """
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < 3:
        raise SampleTooSmall(f"Shapiro-Wilk needs n >= 3, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DegenerateSample("sample contains non-finite values")
    sd = x.std()
    if sd == 0 or sd <= 1e-300 or np.ptp(x) <= 1e-14 * max(1.0, np.abs(x).max()):
        raise DegenerateSample("sample has zero variance")
    z = (x - x.mean()) / sd
    with warnings.catch_warnings():
        # scipy warns above n=5000 that the p-value may be inaccurate
        warnings.simplefilter("ignore", UserWarning)
        res = _sps.shapiro(z)
    return SWResult(float(res.statistic), float(min(max(res.pvalue, 0.0), 1.0)))


def fd_weights(order: int, stencil, center: float = 0.0) -> np.ndarray:
    """Finite-difference weights on an arbitrary stencil (Fornberg, 1988).

    Returns ``c`` such that ``sum(c * f(stencil))`` approximates the
    ``order``-th derivative of ``f`` at ``center``; the rule is exact for
    polynomials of degree ``len(stencil) - 1``.
    """
    x = np.asarray(stencil, dtype=float)
    n = x.size
    if order < 0 or order >= n:
        raise ValueError(f"derivative order {order} needs more than {n} nodes")
    if np.unique(x).size != n:
        raise ValueError("stencil nodes must be distinct")
    z = float(center)
    C = np.zeros((n, order + 1))
    C[0, 0] = 1.0
    c1 = 1.0
    c4 = x[0] - z
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    C[i, k] = c1 * (k * C[i - 1, k - 1] - c5 * C[i - 1, k]) / c2
                C[i, 0] = -c1 * c5 * C[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                C[j, k] = (c4 * C[j, k] - k * C[j, k - 1]) / c3
            C[j, 0] = c4 * C[j, 0] / c3
        c1 = c2
    return C[:, order].copy()


def _line_sse(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = xc @ xc
    r = yc - (xc @ yc / sxx) * xc if sxx > 0 else yc
    return float(r @ r)


def changepoint(series) -> int:
    """Split index of the best two-segment piecewise-linear fit.

    The series is split into ``series[:k]`` and ``series[k:]`` (each at least
    two points) and a separate least-squares line is fitted to each piece
    against the sample index. Returns the ``k`` with the smallest total SSE;
    near-ties (relative 1e-10 of the series scale) go to the smaller ``k``.
    """
    y = np.asarray(series, dtype=float).ravel()
    n = y.size
    if n < 4:
        raise SeriesTooShort(f"changepoint needs at least 4 values, got {n}")
    if not np.all(np.isfinite(y)):
        raise ValueError("changepoint series must be finite")
    x = np.arange(n, dtype=float)
    ks = np.arange(2, n - 1)
    total = np.array([_line_sse(x[:k], y[:k]) + _line_sse(x[k:], y[k:]) for k in ks])
    scale = max(float(np.sum((y - y.mean()) ** 2)), 1e-300)
    best = total.min()
    tied = np.flatnonzero(total <= best + 1e-10 * scale)
    return int(ks[tied[0]])
