import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wendy.core import (Dataset, DimensionMismatch, DomainViolation, EstimationResult, FeatureLibrary,
                        NonFiniteData, NonUniformGrid, TimeGrid, validate_dataset)
from wendy.irls import vec_transpose_permutation
from wendy.models import catalog, monomial, parse_library, truth


def test_time_grid_basics():
    g = TimeGrid.from_span(10.0, 512)
    assert g.M == 512 and g.n_points == 513
    assert g.T == pytest.approx(10.0)
    assert g.t[0] == 0.0 and g.t[-1] == pytest.approx(10.0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, -1.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 2)


def test_from_times_rejects_jitter():
    t = np.linspace(0, 1, 101)
    t[50] += 1e-6
    with pytest.raises(NonUniformGrid):
        TimeGrid.from_times(t)


@given(st.floats(0.01, 100), st.integers(3, 2000))
def test_from_times_reproduces_grid_exactly(T, M):
    g = TimeGrid.from_span(T, M)
    g2 = TimeGrid.from_times(np.array([float(x) for x in g.t]))
    np.testing.assert_array_equal(g2.t, g.t)


@given(st.floats(0.01, 100), st.integers(3, 2000), st.floats(-50, 50))
def test_from_times_offset_grid(T, M, t0):
    g = TimeGrid.from_span(T, M, t0)
    g2 = TimeGrid.from_times(g.t)
    assert g2.n_points == g.n_points
    np.testing.assert_allclose(g2.t, g.t, rtol=0, atol=1e-12 * max(1.0, abs(t0) + T))


def test_dataset_validation():
    g = TimeGrid.from_span(1.0, 10)
    ds = Dataset(g, np.zeros(11))
    assert ds.U.shape == (11, 1) and not ds.U.flags.writeable
    with pytest.raises(DimensionMismatch):
        Dataset(g, np.zeros((10, 2)))
    U = np.zeros((11, 2))
    U[3, 1] = np.nan
    with pytest.raises(NonFiniteData):
        Dataset(g, U)


def test_validate_dataset_examples():
    spec = catalog("logistic")
    validate_dataset(truth("logistic"), spec.lib)
    with pytest.raises(DimensionMismatch):
        validate_dataset(truth("logistic"), catalog("lv").lib)
    ptb = catalog("ptb")
    U = np.ones((20, 5))
    U[7, 4] = -0.3
    with pytest.raises(DomainViolation, match="u5"):
        validate_dataset(Dataset(TimeGrid.from_span(1.0, 19), U), ptb.lib)


@settings(max_examples=50)
@given(st.sampled_from(["logistic", "lotka_volterra", "fitzhugh_nagumo", "hindmarsh_rose", "ptb"]),
       st.data())
def test_vec_mat_duality(name, data):
    lib = catalog(name).lib
    w = data.draw(arrays(float, lib.n_params, elements=st.floats(-1e6, 1e6)))
    np.testing.assert_array_equal(lib.vec(lib.mat(w)), w)
    W = lib.mat(w)
    assert np.all(W[~lib.mask] == 0)


def test_mat_is_column_major_per_equation():
    lib = parse_library("u1,u2; u1,u2")
    W = lib.mat(np.array([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_array_equal(W, [[1, 3], [2, 4]])
    assert lib.param_names() == ["eq1:u1", "eq1:u2", "eq2:u1", "eq2:u2"]


@given(st.integers(1, 12), st.integers(1, 5), st.integers(0, 2**31))
def test_vec_transpose_permutation(n, d, seed):
    E = np.random.default_rng(seed).standard_normal((n, d))
    P = vec_transpose_permutation(n, d)
    np.testing.assert_array_equal(P @ E.ravel(order="F"), E.T.ravel(order="F"))
    assert set(np.unique(P)) <= {0.0, 1.0}
    np.testing.assert_array_equal(P.sum(axis=0), 1)
    np.testing.assert_array_equal(P.sum(axis=1), 1)


def test_rhs_and_jacobian_match_finite_differences(rng):
    lib = catalog("hindmarsh_rose").lib
    W = lib.mat(catalog("hindmarsh_rose").w_star)
    u = rng.standard_normal(3)
    J = lib.jacobian(u, W)
    h = 1e-6
    fd = np.column_stack([(lib.rhs(u + h * e, W) - lib.rhs(u - h * e, W)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(J, fd, rtol=1e-6, atol=1e-6)


def test_library_rejects_bad_terms():
    ft = [monomial([1])]
    with pytest.raises(ValueError):
        FeatureLibrary(1, ft, [[0, 0]])
    with pytest.raises(DimensionMismatch):
        FeatureLibrary(2, ft, [[0]])


def test_estimation_result_checks_reason():
    z = np.zeros(1)
    with pytest.raises(ValueError):
        EstimationResult(z, z, 0.0, z, z, 0, "bogus", z)
