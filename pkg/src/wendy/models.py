"""Benchmark model catalog and synthetic-data helpers."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import Dataset, Feature, FeatureLibrary, TimeGrid, WendyError
from .integrate import IntegratorOptions, rms_norm, solve

__all__ = [
    "UnknownModel",
    "IndivisibleFactor",
    "ModelSpec",
    "monomial",
    "constant",
    "hill",
    "parse_library",
    "catalog",
    "MODEL_NAMES",
    "truth",
    "add_noise",
    "subsample",
]


class UnknownModel(WendyError, KeyError):
    code = "unknown_model"

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown model"


class IndivisibleFactor(WendyError, ValueError):
    code = "indivisible_factor"


def monomial(powers) -> Feature:
    """Feature ``prod_i u_i**powers[i]`` with exact gradient."""
    p = np.asarray(powers, dtype=int)
    if np.any(p < 0):
        raise ValueError("monomial powers must be non-negative")
    if not p.any():
        return constant(len(p))
    name = "*".join(
        f"u{i + 1}" if k == 1 else f"u{i + 1}^{k}" for i, k in enumerate(p) if k
    )
    active = np.flatnonzero(p)

    def f(u):
        out = np.ones(np.shape(u)[:-1])
        for i in active:
            out = out * u[..., i] ** p[i]
        return out

    def grad(u):
        g = np.zeros(np.shape(u))
        for i in active:
            gi = p[i] * u[..., i] ** (p[i] - 1)
            for j in active:
                if j != i:
                    gi = gi * u[..., j] ** p[j]
            g[..., i] = gi
        return g

    return Feature(name, f, grad)


def constant(d: int) -> Feature:
    return Feature("1", lambda u: np.ones(np.shape(u)[:-1]), lambda u: np.zeros(np.shape(u)))


def hill(index: int, k: float) -> Feature:
    """Saturating term ``u_i / (k + u_i)`` (``index`` is 0-based)."""

    def f(u):
        x = u[..., index]
        with np.errstate(divide="ignore", invalid="ignore"):
            return x / (k + x)

    def grad(u):
        g = np.zeros(np.shape(u))
        x = u[..., index]
        with np.errstate(divide="ignore", invalid="ignore"):
            g[..., index] = k / (k + x) ** 2
        return g

    return Feature(f"u{index + 1}/({k:g}+u{index + 1})", f, grad)


_HILL = re.compile(r"^u(\d+)/\(([-+0-9.eE]+)\+u(\d+)\)$")
_POW = re.compile(r"^u(\d+)(?:\^(\d+))?$")


def _parse_term(term: str, d: int) -> tuple[str, Feature]:
    term = term.replace(" ", "")
    m = _HILL.match(term)
    if m and m.group(1) == m.group(3):
        idx = int(m.group(1)) - 1
        if not 0 <= idx < d:
            raise ValueError(f"state index out of range in {term!r}")
        ft = hill(idx, float(m.group(2)))
        return ft.name, ft
    if term == "1":
        return "1", constant(d)
    powers = [0] * d
    for factor in term.split("*"):
        fm = _POW.match(factor)
        if not fm:
            raise ValueError(f"cannot parse feature {term!r}")
        idx = int(fm.group(1)) - 1
        if not 0 <= idx < d:
            raise ValueError(f"state index out of range in {term!r}")
        powers[idx] += int(fm.group(2) or 1)
    ft = monomial(powers)
    return ft.name, ft


def parse_library(text: str, d: int | None = None) -> FeatureLibrary:
    """Build a library from ``"u1,u1*u2; u2,u1*u2"``-style text.

    Equations are separated by ``;`` and terms by ``,``. Terms are ``1``,
    monomials such as ``u1^3*u2`` and saturating terms ``u5/(0.3+u5)``.
    Features shared between equations are stored once.
    """
    eqs = [e.strip() for e in text.split(";") if e.strip()]
    if d is None:
        d = len(eqs)
    if len(eqs) != d:
        raise ValueError(f"library text has {len(eqs)} equations, expected {d}")
    features: list[Feature] = []
    index: dict[str, int] = {}
    terms = []
    for eq in eqs:
        idx = []
        for raw in eq.split(","):
            key, ft = _parse_term(raw, d)
            if key not in index:
                index[key] = len(features)
                features.append(ft)
            idx.append(index[key])
        terms.append(idx)
    return FeatureLibrary(d, features, terms)


@dataclass(frozen=True)
class ModelSpec:
    """A benchmark ODE: library, true parameters, initial state and sampling."""

    name: str
    lib: FeatureLibrary
    w_star: np.ndarray
    u0: np.ndarray
    T: float
    finest_M: int
    rms_ref: float
    stiff: bool
    library_text: str
    notes: str = ""

    def card(self) -> dict:
        return {
            "name": self.name,
            "d": self.lib.d,
            "n_params": self.lib.n_params,
            "library": self.library_text,
            "parameters": self.lib.param_names(),
            "w_star": [float(v) for v in self.w_star],
            "u0": [float(v) for v in self.u0],
            "T": self.T,
            "finest_M": self.finest_M,
            "rms_ref": self.rms_ref,
            "fsnls_method": "stiff_implicit" if self.stiff else "explicit_rk45",
            "notes": self.notes,
        }


_SPECS = {
    "logistic": dict(
        library="u1,u1^2",
        w_star=(1.0, -1.0),
        u0=(0.01,),
        T=10.0,
        finest_M=512,
        rms_ref=0.66,
        stiff=False,
    ),
    "lotka_volterra": dict(
        library="u1,u1*u2; u2,u1*u2",
        w_star=(3.0, -1.0, -6.0, 1.0),
        u0=(1.0, 1.0),
        T=5.0,
        finest_M=1024,
        rms_ref=6.8,
        stiff=False,
    ),
    "fitzhugh_nagumo": dict(
        library="u1,u1^3,u2; u1,1,u2",
        w_star=(3.0, -3.0, 3.0, -1.0 / 3.0, 17.0 / 150.0, 1.0 / 15.0),
        u0=(0.0, 0.1),
        T=25.0,
        finest_M=1024,
        rms_ref=0.68,
        stiff=True,
    ),
    "hindmarsh_rose": dict(
        library="u2,u1^3,u1^2,u3; 1,u1^2,u2; u1,1,u3",
        w_star=(10.0, -10.0, 30.0, -10.0, 10.0, -50.0, -10.0, 0.04, 0.0319, -0.01),
        u0=(-1.31, -7.6, -0.2),
        T=10.0,
        finest_M=1024,
        rms_ref=2.8,
        stiff=True,
        notes=(
            "Equal-variance additive noise swamps the slow third component; "
            "its coefficients become unidentifiable at moderate noise."
        ),
    ),
    "ptb": dict(
        library=(
            "u1,u1*u3,u4; u1; u1*u3,u4,u5/(0.3+u5); u1*u3,u4; u4,u5/(0.3+u5)"
        ),
        # w7 = 0.017 (the saturating inflow to u3 balances the outflow of u5)
        w_star=(-0.07, -0.6, 0.35, 0.07, -0.6, 0.05, 0.017, 0.6, -0.35, 0.3, -0.017),
        u0=(1.0, 0.0, 1.0, 0.0, 1.0),
        T=25.0,
        finest_M=1024,
        rms_ref=0.81,
        stiff=False,
    ),
}

ALIASES = {"lv": "lotka_volterra", "fhn": "fitzhugh_nagumo", "hr": "hindmarsh_rose",
           "lg": "logistic", "logistic_growth": "logistic"}
MODEL_NAMES = tuple(_SPECS)


def _canonical(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in _SPECS:
        raise UnknownModel(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    return key


@lru_cache(maxsize=None)
def _catalog(key: str) -> ModelSpec:
    s = _SPECS[key]
    lib = parse_library(s["library"], len(s["u0"]))
    w = np.array(s["w_star"], dtype=float)
    u0 = np.array(s["u0"], dtype=float)
    w.setflags(write=False)
    u0.setflags(write=False)
    return ModelSpec(key, lib, w, u0, s["T"], s["finest_M"], s["rms_ref"], s["stiff"],
                     s["library"], s.get("notes", ""))


def catalog(name: str) -> ModelSpec:
    return _catalog(_canonical(name))


@lru_cache(maxsize=None)
def _truth(key: str) -> Dataset:
    spec = _catalog(key)
    grid = TimeGrid.from_span(spec.T, spec.finest_M)
    return solve(spec.lib, spec.w_star, spec.u0, grid, IntegratorOptions(1e-12, 1e-12))


def truth(name: str, M: int | None = None) -> Dataset:
    """Noise-free trajectory on the finest grid, subsampled to ``M`` intervals."""
    key = _canonical(name)
    ds = _truth(key)
    if M is None or M == ds.grid.M:
        return ds
    if M <= 0 or ds.grid.M % M:
        raise IndivisibleFactor(f"M={M} does not divide the finest grid M={ds.grid.M}")
    return subsample(ds, ds.grid.M // M)


def add_noise(ds: Dataset, sigma_nr: float, seed) -> Dataset:
    """Add i.i.d. Gaussian noise with std ``sigma_nr * rms(U)``."""
    if sigma_nr < 0:
        raise ValueError("noise ratio must be non-negative")
    if sigma_nr == 0:
        return Dataset(ds.grid, ds.U.copy())
    rng = np.random.default_rng(seed)
    sigma = sigma_nr * rms_norm(ds.U)
    return Dataset(ds.grid, ds.U + sigma * rng.standard_normal(ds.U.shape))


def subsample(ds: Dataset, factor: int) -> Dataset:
    """Keep every ``factor``-th sample, starting from the first."""
    factor = int(factor)
    if factor < 1 or ds.grid.M % factor:
        raise IndivisibleFactor(f"factor {factor} does not divide M={ds.grid.M}")
    if factor == 1:
        return ds
    grid = TimeGrid(ds.grid.t0, ds.grid.dt * factor, ds.grid.M // factor + 1)
    return Dataset(grid, ds.U[::factor].copy())
