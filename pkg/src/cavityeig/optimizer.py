"""Projected-gradient optimisation of symmetric eigenvalue functions.

The feasible set is the mass level set ``V[eps] = m`` intersected with the
nodal spectral box ``alpha <= eig(eps(x)) <= beta``. Each step moves along
the tangent part of the gradient and is pulled back to the feasible set by
:func:`cavityeig.permittivity.clamp_to_mass`.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classification import solve_dirichlet
from .eigensolver import DEFAULT_TOL
from .errors import ClusterError, ConfigError
from .permittivity import (
    AdmissibilityBounds,
    MassConstraint,
    SymMatrixField,
    check_admissibility,
    clamp_to_mass,
    frobenius_mass,
    mass_sensitivity,
)
from .spectral import (
    CLUSTER_TOL,
    SymmetricFunctionSpec,
    lumped_pairing,
    partition_for,
    riesz_field,
    sensitivity,
    sym_func_raw,
    window_tau,
)

log = logging.getLogger(__name__)

ARMIJO = 1e-4
ACTIVE_RTOL = 1e-10
INTERIOR_KKT = 0.05


@dataclass
class OptimizerConfig:
    """Settings of one projected-gradient run.

    Attributes:
        mode: ``"minimize"`` or ``"maximize"``.
        spec: the symmetric function ``Lambda_{F,s}`` to optimise.
        bounds: spectral box ``[alpha, beta]`` (enforced) and gradient bound
            ``gamma`` (monitored only).
        mass: target Frobenius mass; ``None`` keeps the mass of the start.
        step0: first trial step of every line search, relative to the
            lumped norm of the permittivity over that of the tangent gradient.
        max_iters: iteration cap.
        step_shrink: backtracking factor.
        stop_tol: stop once the relative objective change of an accepted
            step falls below this.
        tau_policy: ``"fixed"`` selects the penalty weight once at the start,
            ``"reselect"`` at every iterate.
    """

    mode: str
    spec: SymmetricFunctionSpec
    bounds: AdmissibilityBounds
    mass: MassConstraint | None = None
    step0: float = 0.1
    max_iters: int = 50
    step_shrink: float = 0.5
    stop_tol: float = 1e-6
    tau_policy: str = "fixed"
    cluster_tol: float = CLUSTER_TOL
    max_backtracks: int = 20
    solver_tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.mode not in ("minimize", "maximize"):
            raise ConfigError(f"mode must be 'minimize' or 'maximize', got {self.mode!r}")
        if not self.step0 > 0.0:
            raise ConfigError("step0 must be positive")
        if not self.stop_tol > 0.0:
            raise ConfigError("stop_tol must be positive")
        if not 0.0 < self.step_shrink < 1.0:
            raise ConfigError("step_shrink must lie in (0, 1)")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if self.tau_policy not in ("fixed", "reselect"):
            raise ConfigError(f"unknown tau policy {self.tau_policy!r}")
        if not np.isfinite(self.bounds.beta):
            raise ConfigError("the spectral box needs a finite beta")

    @property
    def sign(self) -> float:
        return -1.0 if self.mode == "minimize" else 1.0


@dataclass
class Iterate:
    fingerprint: str
    value: float
    kkt: float
    kkt_free: float
    multiplier: float
    active_fraction: float
    gamma_violation: bool
    step: float


@dataclass
class OptimizerTrajectory:
    iterates: list[Iterate]
    terminal_status: str
    final: SymMatrixField = field(repr=False)
    tau: float = 0.0

    @property
    def values(self) -> np.ndarray:
        return np.array([it.value for it in self.iterates])

    @property
    def interior_kkt_certified(self) -> bool:
        """True if the last iterate is an interior stationary point."""
        last = self.iterates[-1]
        return last.active_fraction == 0.0 and last.kkt < INTERIOR_KKT


def constraint_normal(eps: SymMatrixField) -> SymMatrixField:
    """Riesz representative of the mass differential; close to ``eps / |eps|_F``."""
    return riesz_field(eps.grid, mass_sensitivity(eps))


def tangent_project(gradient: SymMatrixField, eps: SymMatrixField) -> SymMatrixField:
    """Remove the constraint-normal component so that the mass differential vanishes."""
    N = constraint_normal(eps)
    nn = lumped_pairing(N, N)
    return gradient - N * (lumped_pairing(gradient, N) / nn)


def _kkt(G: SymMatrixField, N: SymMatrixField, weights=None):
    w = np.ones(G.grid.n_nodes) if weights is None else weights.astype(float)
    Gw = SymMatrixField(G.grid, G.values * w[:, None])
    gN = lumped_pairing(Gw, N)
    NN = lumped_pairing(SymMatrixField(N.grid, N.values * w[:, None]), N)
    gg = lumped_pairing(Gw, G)
    if gg == 0.0:
        return 0.0, 0.0
    A = gN / NN if NN > 0.0 else 0.0
    res2 = max(gg - 2.0 * A * gN + A * A * NN, 0.0)
    return float(A), float(np.sqrt(res2 / gg))


def kkt_residual(eps: SymMatrixField, gradient: SymMatrixField, free=None):
    """Least-squares multiplier ``A`` and ``|G - A N| / |G|`` in the lumped norm.

    With ``free`` (boolean node mask) both are computed over those nodes only.
    """
    return _kkt(gradient, constraint_normal(eps), free)


def active_nodes(eps: SymMatrixField, bounds: AdmissibilityBounds) -> np.ndarray:
    lam = np.linalg.eigvalsh(eps.matrices())
    at_a = np.abs(lam - bounds.alpha) <= ACTIVE_RTOL * bounds.alpha
    at_b = np.abs(lam - bounds.beta) <= ACTIVE_RTOL * bounds.beta
    return np.any(at_a | at_b, axis=1)


@dataclass
class _State:
    eps: SymMatrixField
    value: float
    grad: SymMatrixField  # Riesz gradient of the objective


class Objective:
    """``Lambda_{F,s}`` and its gradient at fixed penalty weight."""

    def __init__(self, config: OptimizerConfig, tau: float, rho1: float):
        self.config = config
        self.tau = tau
        self.rho1 = rho1
        self.evaluations = 0

    def __call__(self, eps: SymMatrixField) -> _State:
        cfg = self.config
        tau, rho1 = self.tau, self.rho1
        if cfg.tau_policy == "reselect":
            rho1 = solve_dirichlet(eps.grid, eps, 1)[0].value
            tau = self.tau * self.rho1 / rho1
        self.evaluations += 1
        part = partition_for(eps, cfg.spec.F, tau, rho1, cluster_tol=cfg.cluster_tol, tol=cfg.solver_tol)
        g = sensitivity(part, cfg.spec.s, include_penalty=True)
        return _State(eps, sym_func_raw(part, cfg.spec.s), riesz_field(eps.grid, g))


def step(state: _State, config: OptimizerConfig, objective: Objective, m: float, t0: float):
    """One backtracking step. Returns ``(state_next, diagnostics)``.

    ``diagnostics`` holds ``stall`` (no acceptable step found), ``step``,
    ``active`` (node mask) and ``backtracks``.
    """
    eps = state.eps
    Gt = tangent_project(state.grad, eps)
    gnorm = np.sqrt(lumped_pairing(Gt, Gt))
    diag = {"stall": False, "step": 0.0, "active": active_nodes(eps, config.bounds), "backtracks": 0}
    if gnorm == 0.0:
        diag["stall"] = True
        return state, diag
    direction = Gt * (config.sign / gnorm)
    scale = np.sqrt(lumped_pairing(eps, eps))
    t = t0 * scale
    for b in range(config.max_backtracks):
        diag["backtracks"] = b
        trial = eps + direction * t
        try:
            if np.linalg.eigvalsh(trial.matrices())[:, 0].min() <= 0.0:
                raise ValueError("trial field lost definiteness")
            nxt, active, _ = clamp_to_mass(trial, config.bounds.alpha, config.bounds.beta, m)
            new = objective(nxt)
        except (ValueError, ClusterError) as exc:
            log.debug("step %.3e rejected: %s", t, exc)
            t *= config.step_shrink
            continue
        predicted = config.sign * lumped_pairing(state.grad, nxt - eps)
        gain = config.sign * (new.value - state.value)
        if gain > 0.0 and gain >= ARMIJO * max(predicted, 0.0):
            diag.update(step=t / scale, active=active)
            return new, diag
        t *= config.step_shrink
    diag["stall"] = True
    return state, diag


def _record(state: _State, config: OptimizerConfig, t: float) -> Iterate:
    eps = state.eps
    active = active_nodes(eps, config.bounds)
    A, r = kkt_residual(eps, state.grad)
    _, r_free = kkt_residual(eps, state.grad, ~active) if active.any() and (~active).any() else (A, r)
    report = check_admissibility(eps, config.bounds)
    return Iterate(
        fingerprint=eps.fingerprint(),
        value=state.value,
        kkt=r,
        kkt_free=r_free,
        multiplier=A,
        active_fraction=float(active.mean()),
        gamma_violation=not report.gamma_ok,
        step=t,
    )


def optimize(eps0: SymMatrixField, config: OptimizerConfig) -> OptimizerTrajectory:
    """Run projected gradient from ``eps0`` until stationarity, stall or the cap."""
    report = check_admissibility(eps0, config.bounds)
    if not report.spectral_ok:
        raise ConfigError("start field violates the spectral box")
    m = config.mass.m if config.mass is not None else frobenius_mass(eps0)
    eps0, _, _ = clamp_to_mass(eps0, config.bounds.alpha, config.bounds.beta, m)
    tau = 0.0
    try:
        tau, rho1 = window_tau(eps0, config.spec.F[-1], config.solver_tol)
        objective = Objective(config, tau, rho1)
        state = objective(eps0)
    except ClusterError as exc:
        log.warning("start field: %s", exc)
        return OptimizerTrajectory([], "cluster_error", eps0, tau)
    iterates = [_record(state, config, 0.0)]
    t0 = config.step0
    status = "iteration_cap"
    for _ in range(config.max_iters):
        new, diag = step(state, config, objective, m, t0)
        if diag["stall"]:
            status = "stalled"
            break
        change = abs(new.value - state.value) / max(abs(state.value), 1e-300)
        state = new
        iterates.append(_record(state, config, diag["step"]))
        # grow after a first-try acceptance, otherwise restart from the accepted step
        t0 = min(config.step0, diag["step"] * (2.0 if diag["backtracks"] == 0 else 1.0))
        if change < config.stop_tol:
            status = "stalled"
            break
    if status == "stalled":
        status = "boundary_active" if iterates[-1].active_fraction > 0.0 else "converged"
    return OptimizerTrajectory(iterates, status, state.eps, tau)


def write_trajectory_csv(traj: OptimizerTrajectory, path) -> None:
    """Columns: iter, fingerprint, value, kkt, kkt_free, multiplier, active_fraction, gamma_violation, step."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["iter", "fingerprint", "value", "kkt", "kkt_free", "multiplier", "active_fraction", "gamma_violation", "step"]
        )
        for i, it in enumerate(traj.iterates):
            w.writerow(
                [
                    i,
                    it.fingerprint,
                    repr(it.value),
                    f"{it.kkt:.6e}",
                    f"{it.kkt_free:.6e}",
                    f"{it.multiplier:.6e}",
                    f"{it.active_fraction:.6f}",
                    int(it.gamma_violation),
                    f"{it.step:.6e}",
                ]
            )
