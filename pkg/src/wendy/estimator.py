"""End-to-end weak-form estimation and a scikit-learn style wrapper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import Dataset, EstimationResult, FeatureLibrary, TimeGrid
from .integrate import IntegratorOptions, integrate
from .irls import (IRLSOptions, NoiseFilter, build_L, estimate_sigma, irls, ols_solve,
                   parameter_covariance)
from .testfn import (RadiusSelection, TestBasis, TestFunctionOptions, build_orthonormal_basis,
                     select_min_radius)
from .weakform import WeakSystem, assemble

__all__ = ["ESTIMATORS", "WeakFit", "fit_weak", "WENDyRegressor"]

ESTIMATORS = ("ols", "wendy")


@dataclass
class WeakFit:
    result: EstimationResult
    basis: TestBasis
    system: WeakSystem
    min_radius: int
    selection: RadiusSelection | None


def _ols_result(sys, ds, lib, basis, opts: IRLSOptions) -> EstimationResult:
    w = ols_solve(sys)
    L = build_L(w, ds, lib, basis)
    C = (1.0 - opts.alpha) * (L @ L.T)
    C[np.diag_indices_from(C)] += opts.alpha
    sigma = estimate_sigma(ds, NoiseFilter.default())
    S, stdx = parameter_covariance(sys, C, sigma)
    return EstimationResult(
        w_hat=w, C_hat=C, sigma_hat=sigma, S=S, stdx=stdx, n_iters=0, stop_reason="ols",
        residual=sys.G @ w - sys.b, w_trace=[w.copy()], sw_pvalues=[], alpha_used=opts.alpha,
    )


def fit_weak(ds: Dataset, lib: FeatureLibrary, estimator: str = "wendy",
             tf: TestFunctionOptions | None = None, opts: IRLSOptions | None = None) -> WeakFit:
    """Select the radius, build the basis, assemble ``G, b`` and solve.

    ``estimator`` is ``"wendy"`` (IRLS) or ``"ols"``.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    tf = tf or TestFunctionOptions()
    opts = opts or IRLSOptions()
    sel = None
    if tf.radius is None:
        sel = select_min_radius(ds, tf.s, tf.eta, tf.stride, tf.n_candidates, return_details=True)
        m_t = sel.m_t
    else:
        m_t = int(tf.radius)
    basis = build_orthonormal_basis(ds.grid, m_t, tf.eta, tf.levels, tf.stride)
    sys = assemble(ds, lib, basis)
    if estimator == "ols":
        res = _ols_result(sys, ds, lib, basis, opts)
    else:
        res = irls(sys, ds, lib, basis, opts)
    return WeakFit(res, basis, sys, m_t, sel)


class WENDyRegressor(BaseEstimator):
    """Weak-form ODE parameter estimator.

    ``fit(U, t)`` learns the coefficients of ``u' = Theta(u) W`` from a
    trajectory sampled on a uniform grid. ``predict(t, u0)`` integrates the
    learned model.

    Parameters
    ----------
    library : str or FeatureLibrary
        Either text such as ``"u1,u1*u2; u2,u1*u2"`` or a built library.
    estimator : {"wendy", "ols"}
    eta, s, stride, levels, radius
        Test-function options; ``radius=None`` selects it from the data.
    alpha, tau_fp, tau_sw, n0, max_its
        IRLS options.
    """

    def __init__(self, library="u1,u1^2", estimator="wendy", eta=9.0, s=3.0, stride=1,
                 levels=4, radius=None, alpha=1e-10, tau_fp=1e-6, tau_sw=1e-4, n0=10,
                 max_its=100):
        self.library = library
        self.estimator = estimator
        self.eta = eta
        self.s = s
        self.stride = stride
        self.levels = levels
        self.radius = radius
        self.alpha = alpha
        self.tau_fp = tau_fp
        self.tau_sw = tau_sw
        self.n0 = n0
        self.max_its = max_its

    def _library(self, d: int) -> FeatureLibrary:
        if isinstance(self.library, FeatureLibrary):
            return self.library
        from .models import parse_library

        return parse_library(self.library, d)

    def fit(self, U, t=None, dt=None):
        U = check_array(U, ensure_2d=False, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        if t is not None:
            grid = TimeGrid.from_times(np.asarray(t, dtype=float))
        else:
            grid = TimeGrid(0.0, float(1.0 if dt is None else dt), U.shape[0])
        ds = Dataset(grid, U)
        lib = self._library(ds.d)
        tf = TestFunctionOptions(eta=self.eta, s=self.s, stride=self.stride, levels=self.levels,
                                 radius=self.radius)
        opts = IRLSOptions(self.alpha, self.tau_fp, self.tau_sw, self.n0, self.max_its)
        fit = fit_weak(ds, lib, self.estimator, tf, opts)
        self.library_ = lib
        self.result_ = fit.result
        self.basis_ = fit.basis
        self.min_radius_ = fit.min_radius
        self.coef_ = fit.result.w_hat
        self.stdx_ = fit.result.stdx
        self.sigma_ = fit.result.sigma_hat
        self.n_iter_ = fit.result.n_iters
        self.n_features_in_ = ds.d
        self.u0_ = ds.U[0].copy()
        self.t0_ = grid.t0
        return self

    def predict(self, t, u0=None, rel_tol=1e-10, abs_tol=1e-10, method="explicit_rk45"):
        """Integrate the fitted model from ``u0`` (default: first fitted sample) at times ``t``."""
        check_is_fitted(self, "coef_")
        t = np.asarray(t, dtype=float)
        u0 = self.u0_ if u0 is None else np.atleast_1d(np.asarray(u0, dtype=float))
        lib, W = self.library_, self.library_.mat(self.coef_)
        return integrate(lambda u: lib.rhs(u, W), u0, t, jac=lambda u: lib.jacobian(u, W),
                         opts=IntegratorOptions(rel_tol, abs_tol, method))
