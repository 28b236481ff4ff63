import numpy as np
import pytest

from cavityeig.analytic import cavity_mode, dirichlet_eigenvalues
from cavityeig.assembly import assemble_system
from cavityeig.classification import (
    Tag,
    classify,
    div_residual,
    maxwell_window,
    select_tau,
    separating_div_tol,
    solve_dirichlet,
    write_tagged_csv,
)
from cavityeig.eigensolver import solve_penalized
from cavityeig.grid import BoxDomain, build_grid
from cavityeig.permittivity import SymMatrixField


@pytest.fixture(scope="module")
def setup(cube6):
    eps = SymMatrixField.identity(cube6)
    rho = [p.value for p in solve_dirichlet(cube6, eps, 8)]
    return cube6, eps, rho


def tagged(setup, tau, count=12):
    grid, eps, rho = setup
    system = assemble_system(grid, eps, tau)
    spectrum = solve_penalized(system, count)
    return classify(spectrum, system, rho, div_tol=separating_div_tol(rho[0])), system


def test_dirichlet_spectrum_of_identity(setup):
    _, _, rho = setup
    exact = dirichlet_eigenvalues(cutoff=9.0)
    assert np.allclose(rho[:4], exact[:4], rtol=0.08)
    assert rho[0] < rho[1] and rho[1] == pytest.approx(rho[3])


def test_dirichlet_scales_with_eps(cube4):
    a = [p.value for p in solve_dirichlet(cube4, SymMatrixField.identity(cube4), 3)]
    b = [p.value for p in solve_dirichlet(cube4, SymMatrixField.identity(cube4, 2.0), 3)]
    assert np.allclose(b, 2.0 * np.array(a), rtol=1e-10)


def test_div_residual_separates_families():
    # interpolated cavity mode versus interpolated gradient of sin x sin y sin z
    res_mode, res_grad = [], []
    for n in (4, 8, 16):
        grid = build_grid(BoxDomain.cube(), (n, n, n))
        system = assemble_system(grid, SymMatrixField.identity(grid), 1.0)
        x = grid.node_coords()
        u = cavity_mode(x, (1, 1, 1), (1.0, -1.0, 0.0))  # divergence free
        res_mode.append(div_residual(system.space.restrict(u.ravel()), system))
        g = cavity_mode(x, (1, 1, 1), (1.0, 1.0, 1.0))  # grad of sin sin sin
        res_grad.append(div_residual(system.space.restrict(g.ravel()), system))
    assert res_mode[0] > res_mode[1] > res_mode[2]
    assert res_mode[2] < 0.6 * res_mode[1]  # first order in h
    # div grad f = -3 f and |grad f|^2 = 3 |f|^2: the residual tends to sqrt(3)
    assert res_grad[-1] == pytest.approx(np.sqrt(3.0), rel=0.05)


def test_div_residual_of_zero_vector_raises(identity_system6):
    with pytest.raises(ValueError):
        div_residual(np.zeros(identity_system6.space.n_free), identity_system6)


def test_tags_with_gradient_inside_window(setup):
    ts, _ = tagged(setup, 1.5)
    tags = ts.tags
    assert tags.count("Gradient") == 1
    grad = ts.subset(Tag.GRADIENT)[0]
    assert grad.info.matched_rho == pytest.approx(setup[2][0])
    assert grad.info.div_residual > 1.5
    assert all(p.info.div_residual < 0.2 for p in ts.subset(Tag.MAXWELL))
    assert len(ts.maxwell_values()) == 11


def test_collision_is_flagged(setup):
    # tau rho1 sits on the lowest cavity triple
    ts, _ = tagged(setup, 2.0 / 3.0)
    assert ts.collisions() == [0, 1, 2]
    assert ts.tags[3] == "Gradient"
    # the second gradient family misses tau rho2 by more than 1% on this mesh
    assert "Ambiguous" in ts.tags


def test_empty_dirichlet_list_uses_divergence_only(setup):
    grid, eps, rho = setup
    system = assemble_system(grid, eps, 1.5)
    spectrum = solve_penalized(system, 6)
    ts = classify(spectrum, system, [], div_tol=separating_div_tol(rho[0]))
    assert ts.tags == ["Maxwell"] * 5 + ["Gradient"]


def test_default_tolerance_is_strict(setup):
    grid, eps, rho = setup
    system = assemble_system(grid, eps, 1.5)
    ts = classify(solve_penalized(system, 6), system, rho)
    # the (1,1,0)-type modes keep an O(h) divergence and fail 1e-3
    assert ts.tags[3] == "Ambiguous"


def test_select_tau_and_window(setup):
    grid, eps, rho = setup
    tau = select_tau(6.0, rho[0])
    assert tau * rho[0] == pytest.approx(12.0)
    with pytest.raises(ValueError):
        select_tau(6.0, 0.0)
    with pytest.raises(ValueError):
        select_tau(-1.0, 3.0)
    with pytest.raises(ValueError):
        separating_div_tol(0.0)
    spectrum = solve_penalized(assemble_system(grid, eps, tau), 30)
    win = maxwell_window(spectrum, tau, rho[0])
    assert max(p.value for p in win) <= 6.0 < spectrum.values[len(win)]


def test_tagged_csv(tmp_path, setup):
    ts, _ = tagged(setup, 1.5, 6)
    write_tagged_csv(ts, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "index,sigma,tag,div_residual,matched_rho,residual"
    assert len(lines) == 7
    assert lines[6].split(",")[2] == "Gradient"
