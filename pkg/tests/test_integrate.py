import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wendy.core import TimeGrid
from wendy.integrate import (IntegratorOptions, MaxStepsExceeded, StepSizeUnderflow, dopri5_fixed,
                             integrate, rms_norm, solve)
from wendy.models import MODEL_NAMES, catalog, truth

# frozen from scipy DOP853 at rtol = atol = 1e-13 on the finest grid
RMS_ORACLE = {
    "logistic": 0.6644430565138884,
    "lotka_volterra": 6.867722794100289,
    "fitzhugh_nagumo": 0.6842174849407504,
    "hindmarsh_rose": 2.8402941253866936,
    "ptb": 0.8115961238186333,
}
FINAL_ORACLE = {
    "lotka_volterra": [19.81387898469007, 1.7048522218643498],
    "fitzhugh_nagumo": [0.15534684089232062, -0.5336126960113531],
}


def logistic_exact(t, u0=0.01):
    return u0 * np.exp(t) / (1 + u0 * (np.exp(t) - 1))


def test_logistic_closed_form():
    spec = catalog("logistic")
    ds = solve(spec.lib, spec.w_star, spec.u0, TimeGrid.from_span(10, 512))
    assert ds.U[-1, 0] == pytest.approx(0.01 * np.exp(10) / (1 + 0.01 * (np.exp(10) - 1)), rel=1e-10)
    np.testing.assert_allclose(ds.U[:, 0], logistic_exact(ds.t), rtol=1e-9, atol=1e-12)


def test_dense_output_between_steps():
    # very loose tolerance forces few steps, so most outputs are interpolated
    f = lambda u: u * (1 - u)
    t = np.linspace(0, 10, 2001)
    U = integrate(f, [0.01], t, opts=IntegratorOptions(1e-6, 1e-9))
    np.testing.assert_allclose(U[:, 0], logistic_exact(t), atol=2e-5)


def test_stiff_method_logistic():
    f = lambda u: u * (1 - u)
    jac = lambda u: np.array([[1 - 2 * u[0]]])
    end = integrate(f, [0.01], [0.0, 10.0], jac=jac, opts=IntegratorOptions(1e-8, 1e-8, "stiff_implicit"))
    assert abs(end[-1, 0] - logistic_exact(10.0)) < 100 * 1e-8
    # interior outputs are step endpoints, not interpolated
    t = np.linspace(0, 10, 101)
    U = integrate(f, [0.01], t, jac=jac, opts=IntegratorOptions(1e-8, 1e-8, "stiff_implicit"))
    np.testing.assert_allclose(U[:, 0], logistic_exact(t), atol=2e-5)
    # global error falls with the tolerance (growth phase amplifies it ~ e^5)
    fine = integrate(f, [0.01], t, jac=jac, opts=IntegratorOptions(1e-10, 1e-10, "stiff_implicit",
                                                                     max_steps=10**6))
    assert np.abs(fine[:, 0] - logistic_exact(t)).max() < 1e-6


def test_stiff_method_handles_stiff_linear_system():
    A = np.array([[-1000.0, 0.0], [0.0, -1.0]])
    t = np.linspace(0, 5, 51)
    U = integrate(lambda u: A @ u, [1.0, 1.0], t, jac=lambda u: A,
                  opts=IntegratorOptions(1e-6, 1e-8, "stiff_implicit", max_steps=2000))
    np.testing.assert_allclose(U[:, 1], np.exp(-t), rtol=2e-3)
    assert np.all(np.abs(U[5:, 0]) < 1e-6)


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_zero_field_is_constant(name):
    spec = catalog(name)
    ds = solve(spec.lib, np.zeros(spec.lib.n_params), spec.u0, TimeGrid.from_span(1.0, 16))
    np.testing.assert_array_equal(ds.U, np.tile(spec.u0, (17, 1)))


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_truth_matches_independent_solver(name):
    spec = catalog(name)
    U = truth(name).U
    assert rms_norm(U) == pytest.approx(RMS_ORACLE[name], rel=1e-7)
    assert rms_norm(U) == pytest.approx(spec.rms_ref, rel=0.02)
    if name in FINAL_ORACLE:
        np.testing.assert_allclose(U[-1], FINAL_ORACLE[name], rtol=1e-7)


def test_stiff_solver_agrees_on_fhn():
    spec = catalog("fhn")
    grid = TimeGrid.from_span(spec.T, 256)
    ref = truth("fhn", 256).U
    U = solve(spec.lib, spec.w_star, spec.u0, grid, IntegratorOptions(1e-6, 1e-6, "stiff_implicit")).U
    assert np.linalg.norm(U - ref) / np.linalg.norm(ref) < 1e-3


def test_fixed_step_order_five():
    f = lambda u: u * (1 - u)
    exact = logistic_exact(10.0)
    errs = [abs(dopri5_fixed(f, [0.01], 10.0, n)[0] - exact) for n in (40, 80, 160)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 4.5) and np.all(rates < 6.5)


def test_tolerance_monotone():
    f = lambda u: u * (1 - u)
    t = np.linspace(0, 10, 65)
    prev = None
    for tol in (1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10):
        err = np.max(np.abs(integrate(f, [0.01], t, opts=IntegratorOptions(tol, tol))[:, 0]
                            - logistic_exact(t)))
        if prev is not None:
            assert err <= 2 * prev
        prev = err


def test_blowup_raises():
    with pytest.raises(StepSizeUnderflow):
        integrate(lambda u: u ** 2, [1.0], np.linspace(0, 2, 5))


def test_max_steps():
    with pytest.raises(MaxStepsExceeded):
        integrate(lambda u: -u, [1.0], np.linspace(0, 10, 5), opts=IntegratorOptions(max_steps=5))


def test_options_validation():
    with pytest.raises(ValueError):
        IntegratorOptions(rel_tol=0)
    with pytest.raises(ValueError):
        IntegratorOptions(method="euler")
    with pytest.raises(ValueError):
        integrate(lambda u: u, [1.0], [0.0, 0.0, 1.0])


def test_rms_norm():
    assert rms_norm(np.ones((4, 2))) == 1.0
    with pytest.raises(ValueError):
        rms_norm(np.zeros((0, 2)))


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(0.1, 3))
def test_linear_decay_property(a, T):
    t = np.linspace(0, T, 9)
    U = integrate(lambda u: a * u, [1.0], t, opts=IntegratorOptions(1e-10, 1e-12))
    np.testing.assert_allclose(U[:, 0], np.exp(a * t), rtol=1e-8)
