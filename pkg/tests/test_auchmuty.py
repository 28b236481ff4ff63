from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp

from cavityeig.assembly import AssembledSystem
from cavityeig.auchmuty import (
    AuchmutyState,
    f_gradient,
    f_value,
    minimize_f,
    validation_report,
    write_report,
)
from cavityeig.eigensolver import solve_penalized
from cavityeig.errors import NumericalError


def toy_system():
    # pencil (diag(1, 2, 3), I): T = M + K = diag(2, 3, 4)
    n = 3
    return AssembledSystem(
        K=sp.diags([1.0, 2.0, 3.0]).tocsr(),
        D=sp.csr_matrix((n, n)),
        M=sp.identity(n, format="csr"),
        tau=1.0,
        space=SimpleNamespace(n_free=n),
        eps=None,
    )


@pytest.mark.parametrize("M, sigma", [(0, 1.0), (1, 2.0), (2, 3.0)])
def test_toy_minimum(M, sigma):
    state = AuchmutyState.from_vectors(toy_system(), np.eye(3)[:, :M])
    res = minimize_f(state)
    assert res.f_star == pytest.approx(-1.0 / (2.0 * (sigma + 1.0)), rel=1e-12)
    assert res.sigma_recovered == pytest.approx(sigma, rel=1e-9)
    # the minimiser is the next eigenvector with eps-norm 1 / (sigma + 1)
    assert abs(res.u[M]) == pytest.approx(1.0 / (sigma + 1.0), rel=1e-9)
    assert res.converged


def test_values_at_known_points():
    state = AuchmutyState.from_vectors(toy_system(), np.zeros((3, 0)))
    assert f_value(state, np.zeros(3)) == 0.0
    u = np.array([0.5, 0.0, 0.0])
    assert f_value(state, u) == pytest.approx(0.5 * 2.0 * 0.25 - 0.5)
    assert f_value(state, -u) == f_value(state, u)


def test_gradient_matches_finite_difference():
    rng = np.random.default_rng(0)
    state = AuchmutyState.from_vectors(toy_system(), np.eye(3)[:, :1])
    u = rng.standard_normal(3)
    g = f_gradient(state, u)
    h = 1e-6
    fd = np.array([(f_value(state, u + h * e) - f_value(state, u - h * e)) / (2 * h) for e in np.eye(3)])
    assert np.allclose(g, fd, rtol=1e-7, atol=1e-9)


def test_gradient_undefined_on_projector_span():
    state = AuchmutyState.from_vectors(toy_system(), np.eye(3)[:, :1])
    with pytest.raises(NumericalError):
        f_gradient(state, np.array([1.0, 0.0, 0.0]))


def test_basis_must_be_orthonormal():
    with pytest.raises(ValueError):
        AuchmutyState(toy_system(), 1, np.array([2.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        AuchmutyState(toy_system(), 2, np.eye(3)[:, :1])


@pytest.mark.parametrize("M", [0, 1, 3])
def test_recovers_cavity_eigenvalue(identity_system6, M):
    spectrum = solve_penalized(identity_system6, M + 2)
    state = AuchmutyState.from_vectors(identity_system6, spectrum.vectors[:, :M])
    res = minimize_f(state, restarts=2)
    sigma = spectrum.values[M]
    assert res.f_star == pytest.approx(-0.5 / (sigma + 1.0), rel=1e-10)
    assert res.sigma_recovered == pytest.approx(sigma, rel=1e-6)
    # the minimiser is orthogonal to the projected span
    if M:
        coeff = spectrum.vectors[:, :M].T @ (identity_system6.M @ res.u)
        assert np.abs(coeff).max() < 1e-6 * state.eps_norm(res.u)


def test_report(tmp_path):
    state = AuchmutyState.from_vectors(toy_system(), np.zeros((3, 0)))
    rep = validation_report(state, minimize_f(state, restarts=1), 1.0)
    assert set(rep) == {"M", "f_star", "sigma_recovered", "sigma_reference", "gap", "grad_norm", "restarts_used"}
    assert rep["gap"] < 1e-9
    write_report(rep, tmp_path / "a.json")
    assert '"M": 0' in (tmp_path / "a.json").read_text()
