"""Test functions: C-infinity bumps, minimum-radius selection and the orthonormal basis."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from .core import Dataset, TimeGrid, WendyError
from .stats import changepoint
from .weakform import quadrature_weights

__all__ = [
    "RadiusTooLarge",
    "DegenerateSeries",
    "RankDeficient",
    "BumpParams",
    "TestFunctionOptions",
    "TestBasis",
    "bump_eval",
    "bump_row",
    "convolution_matrix",
    "integration_error_estimate",
    "radius_candidates",
    "RadiusSelection",
    "select_min_radius",
    "fourier_diff",
    "build_orthonormal_basis",
]


class RadiusTooLarge(WendyError, ValueError):
    code = "radius_too_large"


class DegenerateSeries(WendyError, ValueError):
    code = "degenerate_series"


class RankDeficient(WendyError, ValueError):
    code = "rank_deficient"


@dataclass(frozen=True)
class BumpParams:
    eta: float
    m_t: int
    dt: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.m_t < 1:
            raise ValueError("radius must be at least one grid step")

    @property
    def a(self) -> float:
        return self.m_t * self.dt


@dataclass(frozen=True)
class TestFunctionOptions:
    """Test-function hyperparameters. ``radius`` overrides the automatic choice."""

    __test__ = False

    eta: float = 9.0
    s: float = 3.0
    stride: int = 1
    levels: int = 4
    n_candidates: int = 50
    radius: int | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 2 < self.s < 4:
            raise ValueError("coarsening factor s must satisfy 2 < s < 4")
        if self.stride < 1 or self.levels < 1 or self.n_candidates < 4:
            raise ValueError("stride and levels must be >= 1, n_candidates >= 4")
        if self.radius is not None and self.radius < 2:
            raise ValueError("radius override must be >= 2")


def bump_eval(t, center: float, params: BumpParams, C: float = 1.0):
    """``C exp(-eta / (1 - ((t - center)/a)^2))`` inside the support, zero outside."""
    x = (np.asarray(t, dtype=float) - center) / params.a
    inside = np.abs(x) < 1
    out = np.zeros_like(x)
    out[inside] = C * np.exp(-params.eta / (1.0 - x[inside] ** 2))
    return out if out.ndim else float(out)


def bump_row(m_t: int, eta: float) -> np.ndarray:
    """Bump sampled at offsets ``-m_t..m_t`` grid steps, scaled to unit l2 norm."""
    v = bump_eval(np.arange(-m_t, m_t + 1, dtype=float), 0.0, BumpParams(eta, m_t))
    return v / np.linalg.norm(v)


def _centers(n_points: int, m_t: int, stride: int) -> np.ndarray:
    if 2 * m_t > n_points - 1:
        raise RadiusTooLarge(f"radius {m_t} does not fit in a grid with M={n_points - 1}")
    return np.arange(m_t, n_points - m_t, stride)


def convolution_matrix(n_points: int, m_t: int, eta: float, stride: int = 1) -> np.ndarray:
    """Rows are unit-norm bumps of radius ``m_t`` centred at every admissible sample."""
    centers = _centers(n_points, m_t, stride)
    row = bump_row(m_t, eta)
    Psi = np.zeros((centers.size, n_points))
    cols = centers[:, None] + np.arange(-m_t, m_t + 1)[None, :]
    Psi[np.arange(centers.size)[:, None], cols] = row[None, :]
    return Psi


def _per_function_errors(U: np.ndarray, T: float, m_t: int, s: float, eta: float, stride: int):
    M = U.shape[0] - 1
    n = int(np.floor(M / s))
    Psi = convolution_matrix(M + 1, m_t, eta, stride)
    dt = T / M
    m = np.arange(M)
    # only the imaginary part of one DFT mode is needed: Im(e^{-i x}) = -sin x
    phase = -np.sin(2 * np.pi * n * m / M)
    F_im = (dt / np.sqrt(T)) * (Psi[:, :M] @ (U[:M] * phase[:, None]))
    return -(4 * np.pi * n / np.sqrt(T)) * F_im


def integration_error_estimate(ds: Dataset, m_t: int, s: float = 3.0, eta: float = 9.0,
                               stride: int = 1, per_function: bool = False):
    """Root-mean-square estimated quadrature error over test functions of radius ``m_t``.

    Each test function contributes ``-(4 pi n / sqrt(T)) Im F_n[phi_k U_i]``
    with ``n = floor(M/s)``, the coarsest aliased mode visible on the grid.
    With ``per_function=True`` the ``(K, d)`` array of those values is
    returned instead of the aggregate.
    """
    if not 2 < s < 4:
        raise ValueError("coarsening factor must satisfy 2 < s < 4")
    e = _per_function_errors(ds.U, ds.grid.T, int(m_t), s, eta, stride)
    if per_function:
        return e
    return float(np.sqrt(np.sum(e * e) / e.shape[0]))


def radius_candidates(M: int, n: int = 50) -> np.ndarray:
    """Log-spaced integer radii from 2 to ``floor(M/4)``, deduplicated."""
    hi = max(M // 4, 3)
    return np.unique(np.round(np.geomspace(2, hi, n)).astype(int))


@dataclass
class RadiusSelection:
    m_t: int
    candidates: np.ndarray
    e_rms: np.ndarray
    split: int
    flat: bool


def select_min_radius(ds: Dataset, s: float = 3.0, eta: float = 9.0, stride: int = 1,
                      n_candidates: int = 50, flat_ratio: float = 2.0,
                      return_details: bool = False):
    """Minimum test-function radius from the changepoint of log e_rms(m_t).

    The changepoint marks where the estimated integration error stops
    decreasing and the noise floor takes over. If the curve never drops by
    more than ``flat_ratio`` above that floor, there is no integration-error
    regime and the smallest candidate is returned. The result is clamped to
    ``[2, floor(M/8)]``.
    """
    M = ds.grid.M
    if M < 16:
        raise ValueError(f"minimum-radius selection needs M >= 16, got {M}")
    cands = radius_candidates(M, n_candidates)
    e = np.array([integration_error_estimate(ds, int(r), s, eta, stride) for r in cands])
    ok = np.isfinite(e)
    if not ok.any():
        raise DegenerateSeries("integration error estimate is non-finite at every radius")
    cands, e = cands[ok], e[ok]
    tiny = np.finfo(float).tiny
    loge = np.log(np.maximum(e, tiny))
    if loge.size >= 4:
        k = changepoint(loge)
    else:
        k = 0
    floor = np.median(loge[k:])
    flat = bool(np.max(loge[: max(k, 1)]) - floor < np.log(flat_ratio))
    m_t = int(cands[0] if flat else cands[k])
    m_t = int(min(max(m_t, 2), max(M // 8, 2)))
    if return_details:
        return RadiusSelection(m_t, cands, e, int(k), flat)
    return m_t


def fourier_diff(Phi, T: float) -> np.ndarray:
    """Spectral derivative of each row, treating rows as periodic on ``[0, T)``.

    Rows hold ``M+1`` samples including the endpoint ``t = T``; the first
    ``M`` samples span one period and the endpoint reuses the value at 0.
    """
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    M = Phi.shape[1] - 1
    k = np.fft.fftfreq(M, d=1.0 / M)
    if M % 2 == 0:
        k[M // 2] = 0.0
    spec = np.fft.fft(Phi[:, :M], axis=1) * (2j * np.pi * k / T)
    d = np.fft.ifft(spec, axis=1)
    out = np.empty_like(Phi)
    out[:, :M] = d.real
    out[:, M] = out[:, 0]
    return out


@dataclass(frozen=True)
class TestBasis:
    """Orthonormal test functions and their derivatives on a fixed grid.

    ``Phi_q`` and ``Phi_dot_q`` have the trapezoidal weights folded in and are
    what the weak-form system uses.
    """

    __test__ = False

    Phi: np.ndarray
    Phi_dot: np.ndarray
    min_radius: int
    radii_used: tuple
    singular_values: np.ndarray
    grid: TimeGrid
    eta: float = 9.0
    Phi_q: np.ndarray = field(init=False, repr=False)
    Phi_dot_q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        q = quadrature_weights(self.grid.M, self.grid.dt)
        for name, src in (("Phi_q", self.Phi), ("Phi_dot_q", self.Phi_dot)):
            arr = src * q[None, :]
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.Phi.shape[0]


@lru_cache(maxsize=64)
def _basis_cached(n_points: int, dt: float, t0: float, m_t: int, eta: float,
                  levels: int, stride: int) -> TestBasis:
    M = n_points - 1
    radii = tuple(r for r in (m_t * 2 ** l for l in range(levels)) if 2 * r <= M)
    if not radii:
        raise RadiusTooLarge(f"minimum radius {m_t} does not fit in M={M}")
    Psi = np.vstack([convolution_matrix(n_points, r, eta, stride) for r in radii])
    _, sv, Vt = scipy.linalg.svd(Psi, full_matrices=False, lapack_driver="gesdd")
    if not np.isfinite(sv).all() or sv[0] <= 0:
        raise RankDeficient("stacked test-function matrix has no usable singular values")
    rank = int(np.sum(sv > max(Psi.shape) * np.finfo(float).eps * sv[0]))
    if rank < 1:
        raise RankDeficient("all singular values are numerically zero")
    K = changepoint(np.cumsum(sv[:rank])) if rank >= 4 else rank
    Phi = np.ascontiguousarray(Vt[:K])
    # fix the sign of each mode so results do not depend on LAPACK conventions
    signs = np.sign(Phi[np.arange(K), np.argmax(np.abs(Phi), axis=1)])
    Phi *= signs[:, None]
    grid = TimeGrid(t0, dt, n_points)
    Phi_dot = fourier_diff(Phi, grid.T)
    for arr in (Phi, Phi_dot, sv):
        arr.setflags(write=False)
    return TestBasis(Phi, Phi_dot, int(m_t), radii, sv, grid, float(eta))


def build_orthonormal_basis(grid: TimeGrid, m_t: int, eta: float = 9.0, levels: int = 4,
                            stride: int = 1) -> TestBasis:
    """Orthonormalize bumps of radii ``m_t * (1, 2, 4, 8)`` and truncate the SVD.

    Levels whose support would not fit in the domain are dropped. The rank
    ``K`` is the changepoint of the cumulative singular values.
    """
    return _basis_cached(grid.n_points, float(grid.dt), float(grid.t0), int(m_t),
                         float(eta), int(levels), int(stride))
