import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from wendy import WENDyRegressor
from wendy.estimator import fit_weak
from wendy.models import add_noise, catalog, truth


def test_params_round_trip():
    est = WENDyRegressor(library="u1,u1*u2; u2,u1*u2", alpha=1e-8, radius=12)
    params = est.get_params()
    assert params["alpha"] == 1e-8 and params["radius"] == 12
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(estimator="ols")
    assert est.estimator == "ols"


def test_fit_predict_lv():
    ds = add_noise(truth("lv", 256), 0.05, 0)
    est = WENDyRegressor(library="u1,u1*u2; u2,u1*u2").fit(ds.U, t=ds.t)
    assert est.coef_.shape == (4,) and est.stdx_.shape == (4,)
    assert np.linalg.norm(est.coef_ - catalog("lv").w_star) / np.linalg.norm(catalog("lv").w_star) < 0.05
    assert est.n_features_in_ == 2 and est.min_radius_ >= 2
    pred = est.predict(ds.t, u0=truth("lv", 256).U[0])
    clean = truth("lv", 256).U
    assert np.linalg.norm(pred - clean) / np.linalg.norm(clean) < 0.2


def test_fit_with_dt_and_1d_input():
    ds = truth("logistic", 256)
    est = WENDyRegressor().fit(ds.U[:, 0], dt=ds.grid.dt)
    np.testing.assert_allclose(est.coef_, [1, -1], atol=1e-3)
    assert est.predict(ds.t).shape == (ds.grid.n_points, 1)


def test_matches_functional_api():
    ds = add_noise(truth("fhn", 256), 0.05, 1)
    spec = catalog("fhn")
    est = WENDyRegressor(library=spec.lib).fit(ds.U, t=ds.t)
    np.testing.assert_array_equal(est.coef_, fit_weak(ds, spec.lib).result.w_hat)


def test_unfitted_and_bad_input():
    with pytest.raises(NotFittedError):
        WENDyRegressor().predict([0, 1, 2])
    with pytest.raises(ValueError):
        WENDyRegressor().fit(np.array([[1.0], [np.nan], [2.0]]), dt=1.0)
    with pytest.raises(ValueError):
        WENDyRegressor(estimator="lasso").fit(truth("logistic", 64).U, dt=0.1)
