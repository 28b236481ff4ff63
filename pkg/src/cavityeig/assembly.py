"""Sparse Q1 assembly of the penalised Maxwell forms and the scalar Dirichlet form."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _kernels as kern
from .grid import DofKind, DofSpace, Grid, build_dof_space
from .permittivity import SymMatrixField, element_data

_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Matrices of ``T[u, v] = u.(M + K + tau D) v`` on the tangential-zero space."""

    K: sp.csr_matrix
    D: sp.csr_matrix
    M: sp.csr_matrix
    tau: float
    space: DofSpace
    eps: SymMatrixField

    @property
    def A(self) -> sp.csr_matrix:
        return (self.K + self.tau * self.D).tocsr()

    @property
    def T(self) -> sp.csr_matrix:
        return (self.M + self.K + self.tau * self.D).tocsr()

    def with_tau(self, tau: float) -> "AssembledSystem":
        return AssembledSystem(self.K, self.D, self.M, float(tau), self.space, self.eps)


@dataclass(frozen=True, eq=False)
class ScalarSystem:
    S: sp.csr_matrix
    Ms: sp.csr_matrix
    space: DofSpace


def vector_dof_map(space: DofSpace) -> np.ndarray:
    """(n_cells, 24) free index of each element unknown, -1 if constrained."""
    cn = space.grid.cell_nodes()
    glob = (3 * cn[:, :, None] + np.arange(3)[None, None, :]).reshape(cn.shape[0], 24)
    return space.free_index[glob]


def scalar_dof_map(space: DofSpace) -> np.ndarray:
    return space.free_index[space.grid.cell_nodes()]


def _scatter(dof_map: np.ndarray, elements, n: int) -> sp.csr_matrix:
    """Accumulate element matrices into a free-dof CSR matrix.

    ``elements`` is either one matrix shared by all cells or a callable
    returning the element matrices for a slice of cells.
    """
    nc, ne = dof_map.shape
    total = sp.csr_matrix((n, n))
    for start in range(0, nc, _CHUNK):
        stop = min(start + _CHUNK, nc)
        dm = dof_map[start:stop]
        Ae = elements(slice(start, stop)) if callable(elements) else np.broadcast_to(
            elements, (stop - start, ne, ne)
        )
        rows = np.broadcast_to(dm[:, :, None], Ae.shape)
        cols = np.broadcast_to(dm[:, None, :], Ae.shape)
        keep = (rows >= 0) & (cols >= 0)
        total = total + sp.coo_matrix(
            (Ae[keep], (rows[keep], cols[keep])), shape=(n, n)
        ).tocsr()
    total = total.tocsr()
    total.sum_duplicates()
    total = (0.5 * (total + total.T)).tocsr()
    total.sort_indices()
    return total


def _check_positive(eps: SymMatrixField):
    lam = np.linalg.eigvalsh(eps.matrices())
    if lam.min() <= 0.0:
        bad = int(np.argmin(lam[:, 0]))
        raise ValueError(f"permittivity not positive definite at node {bad} (min eig {lam[bad, 0]:.3g})")


def assemble_mass(grid: Grid, eps: SymMatrixField, space: DofSpace) -> sp.csr_matrix:
    _check_positive(eps)
    N, dN, w, cn = element_data(grid)
    cells = eps.values[cn]
    return _scatter(
        vector_dof_map(space), lambda s: kern.mass_elements(cells[s], N, dN, w), space.n_free
    )


def assemble_curlcurl(grid: Grid, space: DofSpace) -> sp.csr_matrix:
    N, dN, w, _ = element_data(grid)
    return _scatter(vector_dof_map(space), kern.curlcurl_element(N, dN, w), space.n_free)


def assemble_div_penalty(grid: Grid, eps: SymMatrixField, space: DofSpace) -> sp.csr_matrix:
    N, dN, w, cn = element_data(grid)
    cells = eps.values[cn]
    return _scatter(
        vector_dof_map(space), lambda s: kern.penalty_elements(cells[s], N, dN, w), space.n_free
    )


def assemble_scalar(grid: Grid, eps: SymMatrixField) -> ScalarSystem:
    _check_positive(eps)
    space = build_dof_space(grid, DofKind.SCALAR_DIRICHLET)
    N, dN, w, cn = element_data(grid)
    cells = eps.values[cn]
    dm = scalar_dof_map(space)
    S = _scatter(dm, lambda s: kern.scalar_stiffness_elements(cells[s], N, dN, w), space.n_free)
    Ms = _scatter(dm, kern.scalar_mass_element(N, w), space.n_free)
    return ScalarSystem(S, Ms, space)


def assemble_system(grid: Grid, eps: SymMatrixField, tau: float, space: DofSpace | None = None):
    if not tau > 0.0:
        raise ValueError(f"penalty weight must be positive, got {tau}")
    if eps.grid != grid:
        raise ValueError("permittivity lives on a different grid")
    if space is None:
        space = build_dof_space(grid, DofKind.VECTOR_TANGENTIAL_ZERO)
    K = assemble_curlcurl(grid, space)
    D = assemble_div_penalty(grid, eps, space)
    M = assemble_mass(grid, eps, space)
    return AssembledSystem(K, D, M, float(tau), space, eps)


def t_form(system: AssembledSystem, u, v) -> float:
    """``T[u, v] = <u, v>_eps + (curl u, curl v) + tau (div eps u, div eps v)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = system.space.n_free
    if u.shape != (n,) or v.shape != (n,):
        raise ValueError(f"expected vectors of length {n}, got {u.shape} and {v.shape}")
    return float(u @ (system.M @ v) + u @ (system.K @ v) + system.tau * (u @ (system.D @ v)))


def dump_matrix(A: sp.spmatrix, path) -> None:
    """Write ``row col value`` triples (1-based, sorted by row then column)."""
    coo = sp.coo_matrix(A)
    order = np.lexsort((coo.col, coo.row))
    with Path(path).open("w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r + 1} {c + 1} {float(v)!r}\n")


def load_matrix(path, shape=None) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    rows = data[:, 0].astype(int) - 1
    cols = data[:, 1].astype(int) - 1
    if shape is None:
        n = int(max(rows.max(), cols.max())) + 1
        shape = (n, n)
    return sp.csr_matrix((data[:, 2], (rows, cols)), shape=shape)
