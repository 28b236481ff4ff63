"""Unconstrained variational characterisation of the penalised eigenvalues.

For the first ``M`` eigenvectors ``u_1..u_M`` (M-orthonormal) define

    f(u) = 1/2 T[u, u] - |(I - P_M) u|_eps,    T = M + K + tau D,

with ``P_M`` the eps-orthogonal projector onto their span. Its minimum is
``-1 / (2 (sigma_{M+1} + 1))``, attained at eigenvectors of ``sigma_{M+1}``
scaled to eps-norm ``1 / (sigma_{M+1} + 1)``. Minimising ``f`` therefore
recovers the next eigenpair without calling an eigensolver, which makes it a
useful independent check of one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .assembly import AssembledSystem
from .eigensolver import orthonormalize
from .errors import NumericalError

log = logging.getLogger(__name__)

NONSMOOTH = 1e-14


@dataclass
class AuchmutyState:
    system: AssembledSystem
    M_count: int
    basis: np.ndarray = field(repr=False)  # (n_free, M_count), M-orthonormal

    def __post_init__(self):
        n = self.system.space.n_free
        B = np.asarray(self.basis, dtype=float).reshape(n, -1)
        if B.shape[1] != self.M_count:
            raise ValueError(f"expected {self.M_count} basis vectors, got {B.shape[1]}")
        if self.M_count:
            gram = B.T @ (self.system.M @ B)
            if np.abs(gram - np.eye(self.M_count)).max() > 1e-10:
                raise ValueError("projector basis is not eps-orthonormal")
        self.basis = B
        self._T = self.system.T

    @classmethod
    def from_vectors(cls, system: AssembledSystem, vectors) -> "AuchmutyState":
        V = np.asarray(vectors, dtype=float).reshape(system.space.n_free, -1)
        if V.shape[1]:
            V = orthonormalize(V, system.M)
        return cls(system, V.shape[1], V)

    def complement(self, u: np.ndarray) -> np.ndarray:
        """``(I - P_M) u``."""
        if self.M_count == 0:
            return u
        return u - self.basis @ (self.basis.T @ (self.system.M @ u))

    def eps_norm(self, u) -> float:
        return float(np.sqrt(max(u @ (self.system.M @ u), 0.0)))


def f_value(state: AuchmutyState, u) -> float:
    u = np.asarray(u, dtype=float)
    return 0.5 * float(u @ (state._T @ u)) - state.eps_norm(state.complement(u))


def f_gradient(state: AuchmutyState, u) -> np.ndarray:
    """Euclidean gradient ``T u - M w / |w|_eps`` with ``w = (I - P_M) u``."""
    u = np.asarray(u, dtype=float)
    w = state.complement(u)
    nw = state.eps_norm(w)
    if nw < NONSMOOTH:
        raise NumericalError("f is not differentiable where (I - P_M) u vanishes")
    return state._T @ u - (state.system.M @ w) / nw


def _value_and_grad(state):
    def fun(u):
        w = state.complement(u)
        Mw = state.system.M @ w
        nw = np.sqrt(max(w @ Mw, 0.0))
        Tu = state._T @ u
        if nw < NONSMOOTH:
            # the kink at w = 0 is never a minimiser; steer the line search away
            return 0.5 * float(u @ Tu), Tu
        return 0.5 * float(u @ Tu) - nw, Tu - Mw / nw

    return fun


@dataclass
class AuchmutyResult:
    u: np.ndarray = field(repr=False)
    f_star: float
    sigma_recovered: float
    grad_norm: float
    restarts_used: int
    converged: bool


def minimize_f(
    state: AuchmutyState,
    *,
    restarts: int = 5,
    seed: int = 0,
    gtol: float = 1e-12,
    max_iter: int = 20000,
) -> AuchmutyResult:
    """Minimise ``f`` from ``restarts`` random starts and keep the lowest value.

    Each start is drawn at random, stripped of its component in the
    projector span, and scaled to eps-norm 1/2. The search is limited-memory
    BFGS with a Wolfe line search. The returned ``grad_norm`` is
    ``|grad f(u*)| / |T u*|``.
    """
    fun = _value_and_grad(state)
    rng = np.random.default_rng(seed)
    n = state.system.space.n_free
    best = None
    for r in range(restarts):
        u0 = state.complement(rng.standard_normal(n))
        u0 *= 0.5 / state.eps_norm(u0)
        res = minimize(
            fun,
            u0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "maxcor": 30, "gtol": gtol, "ftol": 1e-16},
        )
        if best is None or res.fun < best[1].fun:
            best = (r, res)
    r, res = best
    u = res.x
    g = fun(u)[1]
    gnorm = float(np.linalg.norm(g) / max(np.linalg.norm(state._T @ u), 1e-300))
    norm = state.eps_norm(u)
    sigma = 1.0 / norm - 1.0 if norm > 0.0 else float("inf")
    converged = bool(gnorm < 1e-6)
    if not converged:
        log.warning("Auchmuty descent stopped with relative gradient %.2e (%s)", gnorm, res.message)
    return AuchmutyResult(u, float(res.fun), float(sigma), gnorm, restarts, converged)


def validation_report(state: AuchmutyState, result: AuchmutyResult, sigma_reference: float) -> dict:
    """``{M, f_star, sigma_recovered, sigma_reference, gap, grad_norm, restarts_used}``."""
    return {
        "M": state.M_count,
        "f_star": result.f_star,
        "sigma_recovered": result.sigma_recovered,
        "sigma_reference": float(sigma_reference),
        "gap": abs(result.sigma_recovered - sigma_reference) / (1.0 + abs(sigma_reference)),
        "grad_norm": result.grad_norm,
        "restarts_used": result.restarts_used,
    }


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
