"""Weak-form OLS and the errors-in-variables IRLS estimator.

The residual ``r(U, w) = G w - b`` depends on the data through both ``G``
and ``b``. Linearizing in the measurement noise gives ``r ~ L_w vec(eps)``,
so the residual covariance is ``sigma^2 L_w L_w^T``. IRLS alternates between
rebuilding that covariance at the current ``w`` and solving the whitened
least-squares problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import stats as _sps

from .core import Dataset, EstimationResult, FeatureLibrary, WendyError
from .stats import DegenerateSample, fd_weights, shapiro_wilk
from .weakform import WeakSystem

__all__ = [
    "RankDeficientG",
    "CholeskyFailure",
    "TooFewSamples",
    "IRLSOptions",
    "NoiseFilter",
    "ols_solve",
    "vec_transpose_permutation",
    "grad_theta_matrix",
    "build_L",
    "build_L_literal",
    "estimate_sigma",
    "stopping_criteria",
    "irls",
    "parameter_covariance",
    "confidence_intervals",
]


class RankDeficientG(WendyError, np.linalg.LinAlgError):
    code = "rank_deficient_G"

    def __init__(self, msg, columns=()):
        super().__init__(msg)
        self.columns = tuple(int(c) for c in columns)


class CholeskyFailure(WendyError, np.linalg.LinAlgError):
    code = "cholesky_failure"


class TooFewSamples(WendyError, ValueError):
    code = "too_few_samples"


@dataclass(frozen=True)
class IRLSOptions:
    alpha: float = 1e-10
    tau_fp: float = 1e-6
    tau_sw: float = 1e-4
    n0: int = 10
    max_its: int = 100

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.tau_fp < 0 or not 0 <= self.tau_sw <= 1:
            raise ValueError("tolerances out of range")
        if self.n0 < 0 or self.max_its < 1:
            raise ValueError("n0 must be >= 0 and max_its >= 1")


@dataclass(frozen=True)
class NoiseFilter:
    """Unit-norm high-order difference filter used for the noise estimate."""

    f: np.ndarray

    @classmethod
    def default(cls, width: int = 15, order: int = 6) -> "NoiseFilter":
        half = width // 2
        w = fd_weights(order, np.arange(-half, half + 1), 0.0)
        return cls(w / np.linalg.norm(w))


def _qr_rank(G: np.ndarray, rtol: float | None = None):
    Q, R, piv = scipy.linalg.qr(G, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if rtol is None:
        rtol = max(G.shape) * np.finfo(float).eps
    rank = int(np.sum(diag > rtol * diag[0])) if diag.size and diag[0] > 0 else 0
    return Q, R, piv, rank


def _require_full_rank(G: np.ndarray):
    Q, R, piv, rank = _qr_rank(G)
    if rank < G.shape[1]:
        dropped = sorted(piv[rank:])
        raise RankDeficientG(
            f"G has rank {rank} < {G.shape[1]} columns; collinear columns {dropped}",
            dropped,
        )
    return Q, R, piv


def _solve_qr(Q, R, piv, b):
    z = scipy.linalg.solve_triangular(R, Q.T @ b)
    w = np.empty_like(z)
    w[piv] = z
    return w


def ols_solve(sys: WeakSystem) -> np.ndarray:
    """Least-squares solution of ``G w = b`` through column-pivoted QR."""
    Q, R, piv = _require_full_rank(sys.G)
    return _solve_qr(Q, R, piv, sys.b)


def vec_transpose_permutation(n_rows: int, n_cols: int) -> np.ndarray:
    """0/1 matrix P with ``P vec(E) = vec(E^T)`` for ``E`` of shape (n_rows, n_cols)."""
    N = n_rows * n_cols
    idx = np.arange(N).reshape(n_rows, n_cols, order="F")
    P = np.zeros((N, N))
    P[np.arange(N), idx.ravel(order="C")] = 1.0
    return P


def grad_theta_matrix(lib: FeatureLibrary, U) -> np.ndarray:
    """Stacked block-diagonal gradient matrix, shape ``(J*(M+1), (M+1)*d)``."""
    D = lib.grad_theta(U)  # (n, J, d)
    n, J, d = D.shape
    out = np.zeros((J * n, n * d))
    for j in range(J):
        for m in range(n):
            out[j * n + m, m * d:(m + 1) * d] = D[m, j]
    return out


def build_L_literal(w, ds: Dataset, lib: FeatureLibrary, basis) -> np.ndarray:
    """Dense ``[mat(w)^T kron Phi] gradTheta P + [I_d kron Phi_dot]``; small problems only."""
    n, d = ds.U.shape
    W = lib.mat(w)
    P = vec_transpose_permutation(n, d)
    return (np.kron(W.T, basis.Phi_q) @ grad_theta_matrix(lib, ds.U) @ P
            + np.kron(np.eye(d), basis.Phi_dot_q))


def build_L(w, ds: Dataset, lib: FeatureLibrary, basis) -> np.ndarray:
    """First-order map from ``vec(noise)`` to the weak-form residual.

    Block ``(i, l)`` is ``Phi diag(sum_j W[j,i] d f_j/d u_l (U_m)) + delta_il Phi_dot``.
    """
    W = lib.mat(w)
    D = lib.grad_theta(ds.U)  # (n, J, d)
    coef = np.einsum("ji,mjl->ilm", W, D)  # (d, d, n)
    Phi, Phi_dot = basis.Phi_q, basis.Phi_dot_q
    K, n = Phi.shape
    d = ds.d
    L = np.empty((K * d, n * d))
    for i in range(d):
        for l in range(d):
            blk = Phi * coef[i, l][None, :]
            if i == l:
                blk += Phi_dot
            L[i * K:(i + 1) * K, l * n:(l + 1) * n] = blk
    return L


def estimate_sigma(ds: Dataset, filt: NoiseFilter | None = None) -> float:
    """Noise level from the filtered data, ``||f * U||_F / sqrt(N_valid d)``."""
    filt = filt or NoiseFilter.default()
    n, d = ds.U.shape
    if n < filt.f.size:
        raise TooFewSamples(f"need at least {filt.f.size} samples, got {n}")
    conv = np.stack([np.convolve(ds.U[:, i], filt.f, mode="valid") for i in range(d)], axis=1)
    return float(np.linalg.norm(conv) / np.sqrt(conv.size))


def stopping_criteria(w_next, w_prev, whitened_residual, n: int, opts: IRLSOptions):
    """Decide whether IRLS continues after producing iterate ``n``.

    Clauses are checked in the order fixed point, iteration cap, normality.
    Returns ``(continue, reason)``; ``reason`` is ``None`` while iterating.
    ``whitened_residual`` may be ``None`` while ``n <= n0`` (not tested then).
    """
    w_next = np.asarray(w_next, dtype=float)
    w_prev = np.asarray(w_prev, dtype=float)
    denom = np.linalg.norm(w_prev)
    step = np.linalg.norm(w_next - w_prev)
    rel = step / denom if denom > 0 else (0.0 if step == 0 else np.inf)
    if not rel > opts.tau_fp:
        return False, "fixed_point"
    if n >= opts.max_its:
        return False, "max_iterations"
    if n > opts.n0 and whitened_residual is not None:
        try:
            p = shapiro_wilk(whitened_residual).p
        except DegenerateSample:
            p = 1.0
        if not p > opts.tau_sw:
            return False, "shapiro_wilk_reject"
    return True, None


def _whiten(L: np.ndarray, alpha: float):
    C = (1.0 - alpha) * (L @ L.T)
    C[np.diag_indices_from(C)] += alpha
    try:
        R = scipy.linalg.cholesky(C, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return C, None
    if not np.all(np.isfinite(R)):
        return C, None
    return C, R


def irls(sys: WeakSystem, ds: Dataset, lib: FeatureLibrary, basis,
         opts: IRLSOptions | None = None, sigma_filter: NoiseFilter | None = None
         ) -> EstimationResult:
    """Iteratively reweighted least squares with the first-order EiV covariance."""
    opts = opts or IRLSOptions()
    G, b = sys.G, sys.b
    _require_full_rank(G)
    alpha = opts.alpha
    w = ols_solve(sys)
    trace = [w.copy()]
    pvals = []
    n = 0
    reason = None
    while True:
        L = build_L(w, ds, lib, basis)
        C, R = _whiten(L, alpha)
        if R is None:
            if alpha < 1e-6:
                alpha = 1e-6
                C, R = _whiten(L, alpha)
            if R is None:
                raise CholeskyFailure(
                    f"covariance is not positive definite at iteration {n} (alpha={alpha:g})"
                )
        Gw = scipy.linalg.solve_triangular(R, G, lower=True, check_finite=False)
        bw = scipy.linalg.solve_triangular(R, b, lower=True, check_finite=False)
        # same QR path as OLS, so alpha = 1 (C = I) reproduces it bit for bit
        w_new = _solve_qr(*_require_full_rank(Gw), bw)
        n += 1
        res = Gw @ w_new - bw if n > opts.n0 else None
        if res is not None:
            try:
                pvals.append(shapiro_wilk(res).p)
            except DegenerateSample:
                pvals.append(1.0)
        go, reason = stopping_criteria(w_new, w, res, n, opts)
        w = w_new
        trace.append(w.copy())
        if not go:
            break

    L = build_L(w, ds, lib, basis)
    C_hat, R = _whiten(L, alpha)
    if R is None:
        C_hat, R = _whiten(L, max(alpha, 1e-6))
    residual = (scipy.linalg.solve_triangular(R, G @ w - b, lower=True)
                if R is not None else G @ w - b)
    sigma_hat = estimate_sigma(ds, sigma_filter)
    S, stdx = parameter_covariance(sys, C_hat, sigma_hat)
    return EstimationResult(
        w_hat=w, C_hat=C_hat, sigma_hat=sigma_hat, S=S, stdx=stdx, n_iters=n,
        stop_reason=reason, residual=residual, w_trace=trace, sw_pvalues=pvals,
        alpha_used=alpha,
    )


def parameter_covariance(sys: WeakSystem, C_hat, sigma_hat: float, kind: str = "sandwich"):
    """Parameter covariance ``S`` and ``stdx = sqrt(diag(S))``.

    ``kind="sandwich"`` (default) is ``sigma^2 G^+ C G^+T`` with
    ``G^+ = (G^T G)^-1 G^T``. ``kind="gls"`` is ``sigma^2 (G^T C^-1 G)^-1``,
    the covariance of the weighted solution itself; it is tighter and
    calibrates better in coverage studies.
    """
    if kind == "sandwich":
        Q, R, piv = _require_full_rank(sys.G)
        Gp = np.empty((sys.G.shape[1], sys.G.shape[0]))
        Gp[piv] = scipy.linalg.solve_triangular(R, Q.T)
        S = sigma_hat ** 2 * (Gp @ np.asarray(C_hat) @ Gp.T)
    elif kind == "gls":
        Lc = scipy.linalg.cholesky(np.asarray(C_hat), lower=True)
        Gw = scipy.linalg.solve_triangular(Lc, sys.G, lower=True)
        _, R, piv = _require_full_rank(Gw)
        Rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
        A = np.empty_like(Rinv)
        A[piv] = Rinv
        S = sigma_hat ** 2 * (A @ A.T)
    else:
        raise ValueError(f"unknown covariance kind {kind!r}")
    S = 0.5 * (S + S.T)
    stdx = np.sqrt(np.clip(np.diag(S), 0.0, None))
    return S, stdx


def confidence_intervals(result: EstimationResult, level: float = 0.95):
    """Normal-theory intervals ``w_hat +- z * stdx``; returns ``(lo, hi)``."""
    if not 0 < level < 1:
        raise ValueError("confidence level must lie in (0, 1)")
    z = _sps.norm.ppf(0.5 * (1.0 + level))
    half = z * np.asarray(result.stdx)
    return result.w_hat - half, result.w_hat + half
