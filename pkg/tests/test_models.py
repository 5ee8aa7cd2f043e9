import numpy as np
import pytest

from wendy.core import DomainViolation, validate_dataset
from wendy.integrate import rms_norm
from wendy.models import (MODEL_NAMES, IndivisibleFactor, UnknownModel, add_noise, catalog,
                          parse_library, subsample, truth)


def test_logistic_card():
    spec = catalog("logistic")
    np.testing.assert_array_equal(spec.w_star, [1.0, -1.0])
    np.testing.assert_array_equal(spec.u0, [0.01])
    assert spec.T == 10.0


@pytest.mark.parametrize("name, w, u0, T", [
    ("lotka_volterra", (3, -1, -6, 1), (1, 1), 5.0),
    ("fitzhugh_nagumo", (3, -3, 3, -1 / 3, 17 / 150, 1 / 15), (0, 0.1), 25.0),
    ("hindmarsh_rose", (10, -10, 30, -10, 10, -50, -10, 0.04, 0.0319, -0.01), (-1.31, -7.6, -0.2),
     10.0),
])
def test_catalog_values(name, w, u0, T):
    spec = catalog(name)
    np.testing.assert_allclose(spec.w_star, w, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(spec.u0, u0)
    assert spec.T == T


def test_hr_span():
    w = np.abs(catalog("hr").w_star)
    assert w.min() == 0.01 and w.max() == 50.0
    assert 1e3 <= w.max() / w.min() < 1e4


def test_ptb_shape():
    spec = catalog("ptb")
    assert spec.lib.n_params == 11 and spec.lib.d == 5
    assert "u5/(0.3+u5)" in spec.lib.names


def test_aliases_and_unknown():
    assert catalog("LV").name == "lotka_volterra"
    assert catalog("fitzhugh-nagumo").name == "fitzhugh_nagumo"
    with pytest.raises(UnknownModel):
        catalog("van_der_pol")


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_gradients_match_finite_differences(name):
    lib = catalog(name).lib
    rng = np.random.default_rng(3)
    U = rng.uniform(0.2, 2.0, size=(100, lib.d))
    G = lib.grad_theta(U)
    h = 1e-6
    for i in range(lib.d):
        e = np.zeros(lib.d)
        e[i] = h
        fd = (lib.theta(U + e) - lib.theta(U - e)) / (2 * h)
        np.testing.assert_allclose(G[:, :, i], fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_rms_reference(name):
    spec = catalog(name)
    assert rms_norm(truth(name).U) == pytest.approx(spec.rms_ref, rel=0.02)


def test_add_noise_zero_is_exact():
    ds = truth("lv")
    np.testing.assert_array_equal(add_noise(ds, 0.0, 1).U, ds.U)


def test_add_noise_ratio():
    ds = truth("lv")
    for seed in range(5):
        noisy = add_noise(ds, 0.2, seed)
        ratio = rms_norm(noisy.U - ds.U) / rms_norm(noisy.U)
        assert ratio == pytest.approx(0.2, rel=0.1)


def test_add_noise_deterministic():
    ds = truth("fhn", 256)
    np.testing.assert_array_equal(add_noise(ds, 0.1, 42).U, add_noise(ds, 0.1, 42).U)
    assert not np.array_equal(add_noise(ds, 0.1, 42).U, add_noise(ds, 0.1, 43).U)
    with pytest.raises(ValueError):
        add_noise(ds, -0.1, 0)


def test_subsample():
    ds = truth("lv")
    sub = subsample(ds, 4)
    assert sub.grid.M == 256 and sub.grid.dt == 4 * ds.grid.dt
    np.testing.assert_array_equal(sub.U, ds.U[::4])
    assert subsample(ds, 1) is ds
    with pytest.raises(IndivisibleFactor):
        subsample(ds, 3)
    with pytest.raises(IndivisibleFactor):
        truth("lv", 300)


def test_parse_library_dedups_shared_features():
    lib = parse_library("u1,u1*u2; u2,u1*u2")
    assert lib.J == 3 and lib.n_params == 4
    assert lib.terms == ((0, 1), (2, 1))
    with pytest.raises(ValueError):
        parse_library("u3", 2)


def test_hill_domain_violation():
    from wendy.core import Dataset, TimeGrid

    U = np.full((5, 5), 0.5)
    U[2, 4] = -0.3
    with pytest.raises(DomainViolation, match="sample 2"):
        validate_dataset(Dataset(TimeGrid(0, 1, 5), U), catalog("ptb").lib)
