import numpy as np
import pytest

from cavityeig.errors import ConfigError
from cavityeig.permittivity import (
    AdmissibilityBounds,
    MassConstraint,
    SymMatrixField,
    frobenius_mass,
    mass_differential,
    random_smooth_field,
)
from cavityeig.optimizer import (
    OptimizerConfig,
    active_nodes,
    constraint_normal,
    kkt_residual,
    optimize,
    tangent_project,
    write_trajectory_csv,
)
from cavityeig.spectral import SymmetricFunctionSpec, lumped_pairing

from conftest import random_sym_field

BOUNDS = AdmissibilityBounds(0.5, 2.0, 50.0)


@pytest.fixture(scope="module")
def start(cube4):
    return random_smooth_field(cube4, BOUNDS, np.random.default_rng(21))


def config(mode, F=(1,), s=1, **kw):
    kw.setdefault("max_iters", 4)
    return OptimizerConfig(mode, SymmetricFunctionSpec(F, s), BOUNDS, **kw)


def test_tangent_projection_kills_mass_change(start):
    G = random_sym_field(start.grid, np.random.default_rng(0))
    Gt = tangent_project(G, start)
    assert abs(mass_differential(start, Gt)) < 1e-12 * abs(mass_differential(start, G))
    assert lumped_pairing(Gt, constraint_normal(start)) == pytest.approx(0.0, abs=1e-12)
    # projecting twice changes nothing
    assert np.allclose(tangent_project(Gt, start).values, Gt.values, atol=1e-12)


def test_constraint_normal_of_scaled_identity(cube4):
    # d|eps|_F along eta is eps : eta / |eps|_F, so N = I / sqrt(3) for eps = cI
    N = constraint_normal(SymMatrixField.identity(cube4, 1.7))
    assert np.allclose(N.values, SymMatrixField.identity(cube4, 1.0 / np.sqrt(3.0)).values)


def test_kkt_residual_examples(start):
    N = constraint_normal(start)
    A, r = kkt_residual(start, N * 3.0)
    assert A == pytest.approx(3.0) and r == pytest.approx(0.0, abs=1e-7)
    T = tangent_project(random_sym_field(start.grid, np.random.default_rng(1)), start)
    A, r = kkt_residual(start, T)
    assert A == pytest.approx(0.0, abs=1e-12) and r == pytest.approx(1.0)
    assert kkt_residual(start, SymMatrixField.zeros(start.grid)) == (0.0, 0.0)


def test_active_nodes(cube4):
    eps = SymMatrixField.constant(cube4, np.diag([0.5, 1.0, 1.5]))
    assert active_nodes(eps, BOUNDS).all()
    assert not active_nodes(SymMatrixField.identity(cube4), BOUNDS).any()


def test_config_validation():
    spec = SymmetricFunctionSpec((1,), 1)
    for kw in ({"mode": "sideways"}, {"step0": 0.0}, {"step_shrink": 1.0}, {"max_iters": 0},
               {"tau_policy": "often"}, {"stop_tol": -1.0}):
        args = {"mode": "minimize"} | kw
        with pytest.raises(ConfigError):
            OptimizerConfig(args.pop("mode"), spec, BOUNDS, **args)
    with pytest.raises(ValueError):
        AdmissibilityBounds(0.5, np.inf, 1.0)
    assert config("minimize").sign == -1.0 and config("maximize").sign == 1.0


@pytest.mark.parametrize("mode", ["minimize", "maximize"])
def test_runs_are_monotone_and_feasible(start, mode):
    traj = optimize(start, config(mode))
    vals = traj.values
    assert len(vals) >= 2
    sign = 1.0 if mode == "maximize" else -1.0
    assert np.all(sign * np.diff(vals) > 0)
    m0 = frobenius_mass(start)
    assert frobenius_mass(traj.final) == pytest.approx(m0, rel=1e-9)
    lam = np.linalg.eigvalsh(traj.final.matrices())
    assert lam.min() >= BOUNDS.alpha - 1e-12 and lam.max() <= BOUNDS.beta + 1e-12
    assert traj.terminal_status in ("converged", "boundary_active", "iteration_cap")


def test_mass_target_is_enforced(start):
    m = 1.1 * frobenius_mass(start)
    traj = optimize(start, config("minimize", mass=MassConstraint(m), max_iters=1))
    assert frobenius_mass(traj.final) == pytest.approx(m, rel=1e-9)


def test_runs_are_deterministic(start):
    a = optimize(start, config("maximize", F=(1, 2, 3), s=2, max_iters=2))
    b = optimize(start, config("maximize", F=(1, 2, 3), s=2, max_iters=2))
    assert [i.fingerprint for i in a.iterates] == [i.fingerprint for i in b.iterates]
    assert a.final.fingerprint() == b.final.fingerprint()


def test_cluster_at_start_is_reported(cube4):
    traj = optimize(SymMatrixField.identity(cube4), config("minimize"))
    assert traj.terminal_status == "cluster_error" and traj.iterates == []


def test_start_outside_box_rejected(cube4):
    with pytest.raises(ConfigError):
        optimize(SymMatrixField.identity(cube4, 3.0), config("minimize"))


def test_trajectory_csv(tmp_path, start):
    traj = optimize(start, config("minimize", max_iters=1))
    write_trajectory_csv(traj, tmp_path / "traj.csv")
    lines = (tmp_path / "traj.csv").read_text().splitlines()
    assert lines[0].startswith("iter,fingerprint,value,kkt")
    assert len(lines) == len(traj.iterates) + 1
