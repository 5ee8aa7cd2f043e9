"""Shared domain types: time grids, datasets, feature libraries, results."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "WendyError",
    "DimensionMismatch",
    "NonFiniteData",
    "DomainViolation",
    "NonUniformGrid",
    "TimeGrid",
    "Dataset",
    "Feature",
    "FeatureLibrary",
    "EstimationResult",
    "STOP_REASONS",
    "validate_dataset",
]


class WendyError(Exception):
    """Base class for all package errors; ``code`` is a stable machine-readable tag."""

    code = "wendy_error"


class DimensionMismatch(WendyError, ValueError):
    code = "dimension_mismatch"


class NonFiniteData(WendyError, ValueError):
    code = "non_finite_data"


class DomainViolation(WendyError, ValueError):
    code = "domain_violation"


class NonUniformGrid(WendyError, ValueError):
    code = "non_uniform_grid"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_m = t0 + m*dt`` for ``m = 0..M``."""

    t0: float
    dt: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_points < 3:
            raise ValueError(f"need at least 3 samples (M >= 2), got {self.n_points}")

    @classmethod
    def from_span(cls, T: float, M: int, t0: float = 0.0) -> "TimeGrid":
        return cls(t0=float(t0), dt=float(T) / M, n_points=M + 1)

    @classmethod
    def from_times(cls, t, rtol: float = 1e-9) -> "TimeGrid":
        t = np.asarray(t, dtype=float)
        if t.ndim != 1 or t.size < 3:
            raise DimensionMismatch("time column must be 1-D with at least 3 samples")
        steps = np.diff(t)
        dt = (t[-1] - t[0]) / (t.size - 1)
        if dt <= 0 or np.max(np.abs(steps - dt)) > rtol * abs(dt) + 1e-14 * max(1.0, abs(t[-1])):
            raise NonUniformGrid(
                f"time samples are not uniform within relative tolerance {rtol:g}"
            )
        # prefer a dt near the mean step that regenerates t exactly, so a grid
        # written to text and read back is bit-identical
        idx = np.arange(t.size)
        half = 0.5 * np.spacing(np.abs(t[1:]))
        lo = np.max((t[1:] - half - t[0]) / idx[1:])
        hi = np.min((t[1:] + half - t[0]) / idx[1:])
        for cand in np.r_[0.5 * (lo + hi), np.linspace(lo, hi, 17), dt]:
            if cand > 0 and np.array_equal(t[0] + cand * idx, t):
                dt = cand
                break
        return cls(t0=float(t[0]), dt=float(dt), n_points=int(t.size))

    @property
    def M(self) -> int:
        return self.n_points - 1

    @property
    def T(self) -> float:
        return self.M * self.dt

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_points)


@dataclass(frozen=True)
class Dataset:
    grid: TimeGrid
    U: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        if U.ndim != 2 or U.shape[0] != self.grid.n_points:
            raise DimensionMismatch(
                f"U has shape {U.shape}, expected ({self.grid.n_points}, d)"
            )
        if not np.all(np.isfinite(U)):
            raise NonFiniteData("state observations contain NaN or inf")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)

    @property
    def d(self) -> int:
        return self.U.shape[1]

    @property
    def t(self) -> np.ndarray:
        return self.grid.t


@dataclass(frozen=True)
class Feature:
    """A scalar feature ``f(u)`` with its gradient.

    Both callables act on the trailing axis, so ``f(U)`` maps an ``(n, d)``
    array to ``(n,)`` and ``grad(U)`` maps it to ``(n, d)``.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]


class FeatureLibrary:
    """Feature map Theta(u) = [f_1(u), ..., f_J(u)] with optional per-equation masks.

    Parameters
    ----------
    d : int
        State dimension.
    features : sequence of Feature
        The J distinct features.
    terms : sequence of sequences of int, optional
        ``terms[i]`` lists the feature indices present in equation ``i``.
        Defaults to every feature in every equation, in which case the
        parameter vector has the full length ``J*d``.

    The parameter vector stacks, equation by equation, the coefficients of
    the active features; ``mat`` scatters it into the ``J x d`` matrix
    whose column ``i`` holds equation ``i``.
    """

    def __init__(self, d: int, features: Sequence[Feature], terms=None):
        if d < 1:
            raise ValueError("d must be >= 1")
        if len(features) < 1:
            raise ValueError("library needs at least one feature")
        self.d = int(d)
        self.features = tuple(features)
        J = len(self.features)
        if terms is None:
            terms = [tuple(range(J))] * self.d
        terms = tuple(tuple(int(j) for j in eq) for eq in terms)
        if len(terms) != self.d:
            raise DimensionMismatch(f"terms lists {len(terms)} equations, expected {d}")
        for eq in terms:
            if len(eq) == 0 or len(set(eq)) != len(eq) or min(eq) < 0 or max(eq) >= J:
                raise ValueError(f"invalid term list {eq} for J={J}")
        self.terms = terms
        mask = np.zeros((J, self.d), dtype=bool)
        for i, eq in enumerate(terms):
            mask[list(eq), i] = True
        self.mask = mask
        # column-major positions of active entries, equation by equation
        self._rows = np.concatenate([np.asarray(eq, dtype=int) for eq in terms])
        self._cols = np.concatenate([np.full(len(eq), i) for i, eq in enumerate(terms)])

    def __repr__(self):
        return f"FeatureLibrary(d={self.d}, J={self.J}, n_params={self.n_params})"

    @property
    def J(self) -> int:
        return len(self.features)

    @property
    def n_params(self) -> int:
        return int(self.mask.sum())

    @property
    def names(self) -> list[str]:
        return [ft.name for ft in self.features]

    def param_names(self) -> list[str]:
        return [f"eq{i + 1}:{self.features[j].name}" for j, i in zip(self._rows, self._cols)]

    def theta(self, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return np.stack([np.broadcast_to(ft.f(U), U.shape[:-1]) for ft in self.features], axis=-1)

    def grad_theta(self, U) -> np.ndarray:
        """Gradients stacked as ``(n, J, d)``."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return np.stack([np.broadcast_to(ft.grad(U), U.shape) for ft in self.features], axis=-2)

    def mat(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n_params,):
            raise DimensionMismatch(f"w has shape {w.shape}, expected ({self.n_params},)")
        W = np.zeros((self.J, self.d))
        W[self._rows, self._cols] = w
        return W

    def vec(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if W.shape != (self.J, self.d):
            raise DimensionMismatch(f"W has shape {W.shape}, expected ({self.J}, {self.d})")
        return W[self._rows, self._cols].copy()

    def rhs(self, u, W) -> np.ndarray:
        """Vector field Theta(u) W for a single state or a stack of states."""
        u = np.asarray(u, dtype=float)
        vals = np.array([ft.f(u) for ft in self.features])
        return np.tensordot(vals, W, axes=(0, 0))

    def jacobian(self, u, W) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        grads = np.array([ft.grad(u) for ft in self.features])  # (J, d)
        return W.T @ grads


STOP_REASONS = ("fixed_point", "max_iterations", "shapiro_wilk_reject")


@dataclass
class EstimationResult:
    """Output of the weak-form estimators.

    ``S`` is the parameter covariance and ``stdx`` its diagonal square root.
    ``C_hat`` is the response covariance (up to the noise variance).
    """

    w_hat: np.ndarray
    C_hat: np.ndarray
    sigma_hat: float
    S: np.ndarray
    stdx: np.ndarray
    n_iters: int
    stop_reason: str
    residual: np.ndarray
    w_trace: list = field(default_factory=list)
    sw_pvalues: list = field(default_factory=list)
    alpha_used: float = 1e-10

    def __post_init__(self):
        if self.stop_reason not in STOP_REASONS + ("ols",):
            raise ValueError(f"unknown stop reason {self.stop_reason!r}")


def validate_dataset(ds: Dataset, lib: FeatureLibrary) -> None:
    """Check that ``ds`` and ``lib`` agree and the features are finite on the data."""
    if ds.d != lib.d:
        raise DimensionMismatch(f"library expects d={lib.d}, data has {ds.d} columns")
    if not np.all(np.isfinite(ds.U)):
        raise NonFiniteData("state observations contain NaN or inf")
    with np.errstate(all="ignore"):
        vals = lib.theta(ds.U)
        grads = lib.grad_theta(ds.U)
    bad = ~np.isfinite(vals)
    if bad.any() or not np.all(np.isfinite(grads)):
        if bad.any():
            m, j = np.argwhere(bad)[0]
        else:
            m, j = np.argwhere(~np.isfinite(grads))[0][:2]
        raise DomainViolation(
            f"feature {lib.features[j].name!r} is not finite at sample {m} (t={ds.t[m]:g})"
        )
