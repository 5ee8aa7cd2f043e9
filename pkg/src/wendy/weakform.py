"""Weak-form linear system G w = b with trapezoidal quadrature."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .core import Dataset, DimensionMismatch, FeatureLibrary, validate_dataset

if TYPE_CHECKING:
    from .testfn import TestBasis

__all__ = ["quadrature_weights", "WeakSystem", "assemble"]


def quadrature_weights(M: int, dt: float) -> np.ndarray:
    """Composite trapezoid weights ``(dt/2, dt, ..., dt, dt/2)`` on ``M+1`` nodes."""
    if M < 2:
        raise ValueError("quadrature needs M >= 2")
    q = np.full(M + 1, float(dt))
    q[0] = q[-1] = dt / 2
    return q


@dataclass(frozen=True)
class WeakSystem:
    """``G = blockdiag_i(Phi Theta(U)[:, terms_i])`` and ``b = -vec(Phi_dot U)``.

    Without feature masks every block is the same ``K x J`` matrix, i.e.
    ``G = I_d kron (Phi Theta(U))``.
    """

    G: np.ndarray
    b: np.ndarray
    PhiTheta: np.ndarray
    K: int
    J: int
    d: int
    M: int
    col_blocks: tuple

    def block(self, i: int) -> np.ndarray:
        lo, hi = self.col_blocks[i]
        return self.G[i * self.K:(i + 1) * self.K, lo:hi]


def assemble(ds: Dataset, lib: FeatureLibrary, basis: "TestBasis") -> WeakSystem:
    validate_dataset(ds, lib)
    if basis.Phi.shape[1] != ds.grid.n_points:
        raise DimensionMismatch(
            f"basis has {basis.Phi.shape[1]} columns but data has {ds.grid.n_points} samples"
        )
    K, d = basis.K, ds.d
    PhiTheta = basis.Phi_q @ lib.theta(ds.U)
    b = -(basis.Phi_dot_q @ ds.U).reshape(-1, order="F")
    G = np.zeros((K * d, lib.n_params))
    blocks = []
    col = 0
    for i, eq in enumerate(lib.terms):
        G[i * K:(i + 1) * K, col:col + len(eq)] = PhiTheta[:, list(eq)]
        blocks.append((col, col + len(eq)))
        col += len(eq)
    return WeakSystem(G, b, PhiTheta, K, lib.J, d, ds.grid.M, tuple(blocks))
