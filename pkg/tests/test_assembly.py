import numpy as np
import pytest
import scipy.sparse as sp

from cavityeig import _kernels as kern
from cavityeig.assembly import (
    assemble_scalar,
    assemble_system,
    dump_matrix,
    load_matrix,
    t_form,
)
from cavityeig.permittivity import SymMatrixField

from conftest import random_sym_field


def vector_laplacian(grid, space):
    """Componentwise Q1 stiffness on the free unknowns, assembled by hand."""
    N, dN, w = kern.reference_element(grid.spacing)
    L = w * np.einsum("qai,qbi->ab", dN, dN)
    rows, cols, vals = [], [], []
    for nodes in grid.cell_nodes():
        for c in range(3):
            idx = space.free_index[3 * nodes + c]
            for a in range(8):
                for b in range(8):
                    if idx[a] >= 0 and idx[b] >= 0:
                        rows.append(idx[a])
                        cols.append(idx[b])
                        vals.append(L[a, b])
    n = space.n_free
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def test_curl_plus_div_equals_vector_laplacian(box_grid):
    # with eps = I the tangential boundary condition makes
    # |curl u|^2 + |div u|^2 and |grad u|^2 integrate to the same value
    system = assemble_system(box_grid, SymMatrixField.identity(box_grid), 1.0)
    ref = vector_laplacian(box_grid, system.space)
    assert abs(system.A - ref).max() < 1e-12


def test_matrices_are_symmetric_and_definite(cube4):
    eps = SymMatrixField.identity(cube4, 1.2) + random_sym_field(cube4, np.random.default_rng(0), 0.1)
    system = assemble_system(cube4, eps, 2.0)
    for mat in (system.K, system.D, system.M):
        assert abs(mat - mat.T).max() == 0.0
    assert np.linalg.eigvalsh(system.M.toarray()).min() > 0
    assert np.linalg.eigvalsh(system.K.toarray()).min() > -1e-10
    assert np.linalg.eigvalsh(system.D.toarray()).min() > -1e-10


def test_mass_is_linear_and_decoupled_for_identity(cube4):
    one = assemble_system(cube4, SymMatrixField.identity(cube4), 1.0)
    two = assemble_system(cube4, SymMatrixField.identity(cube4, 2.0), 1.0)
    assert abs(two.M - 2.0 * one.M).max() < 1e-14
    assert abs(two.D - 4.0 * one.D).max() < 1e-12
    comp = np.empty(one.space.n_free, dtype=int)
    free = one.space.free_index
    for g in np.flatnonzero(free >= 0):
        comp[free[g]] = g % 3
    coo = one.M.tocoo()
    mixed = comp[coo.row] != comp[coo.col]
    assert np.all(coo.data[mixed] == 0.0)


def test_t_form_matches_matrices(identity_system6):
    rng = np.random.default_rng(2)
    n = identity_system6.space.n_free
    u, v = rng.standard_normal(n), rng.standard_normal(n)
    assert t_form(identity_system6, u, v) == pytest.approx(u @ (identity_system6.T @ v), rel=1e-12)
    assert t_form(identity_system6, u, v) == pytest.approx(t_form(identity_system6, v, u), rel=1e-12)
    with pytest.raises(ValueError):
        t_form(identity_system6, u[:-1], v)


def test_with_tau_only_changes_weight(identity_system6):
    other = identity_system6.with_tau(9.0)
    assert other.K is identity_system6.K
    assert abs(other.A - (other.K + 9.0 * other.D)).max() == 0.0


def test_rejects_bad_inputs(cube4, cube6):
    with pytest.raises(ValueError):
        assemble_system(cube4, SymMatrixField.identity(cube4), 0.0)
    with pytest.raises(ValueError):
        assemble_system(cube4, SymMatrixField.identity(cube6), 1.0)
    with pytest.raises(ValueError):
        assemble_system(cube4, SymMatrixField.constant(cube4, np.diag([1.0, -1.0, 1.0])), 1.0)


def test_scalar_system_on_identity(cube4):
    sys = assemble_scalar(cube4, SymMatrixField.identity(cube4))
    assert sys.S.shape == (27, 27)
    assert abs(sys.S - sys.S.T).max() == 0.0
    # a hat whose neighbours are all free integrates to h^3; the centre node is one
    centre = sys.space.free_index[2 + 5 * (2 + 5 * 2)]
    assert sys.Ms[centre].sum() == pytest.approx(cube4.cell_volume)
    assert np.linalg.eigvalsh(sys.S.toarray()).min() > 0


def test_dump_load_round_trip(tmp_path, cube4):
    system = assemble_system(cube4, SymMatrixField.identity(cube4), 1.0)
    dump_matrix(system.M, tmp_path / "m.txt")
    back = load_matrix(tmp_path / "m.txt", shape=system.M.shape)
    assert abs(back - system.M).max() == 0.0
    first = (tmp_path / "m.txt").read_text().splitlines()[0].split()
    assert first[:2] == ["1", "1"]


def test_assembly_is_bitwise_deterministic(cube4):
    eps = SymMatrixField.identity(cube4) + random_sym_field(cube4, np.random.default_rng(1), 0.1)
    a = assemble_system(cube4, eps, 3.0)
    b = assemble_system(cube4, eps, 3.0)
    for x, y in ((a.K, b.K), (a.D, b.D), (a.M, b.M)):
        assert np.array_equal(x.data, y.data) and np.array_equal(x.indices, y.indices)
