"""Separate the penalised spectrum into Maxwell and gradient families.

The penalised pencil ``(K + tau D, M)`` carries two kinds of eigenpairs:
divergence-free cavity modes whose value does not see ``tau``, and
gradients of scalar Dirichlet eigenfunctions whose value is ``tau * rho``.
The intrinsic test is the relative size of ``div(eps u)``; agreement with
some ``tau * rho_i`` is used as corroborating evidence.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import AssembledSystem, assemble_scalar
from .eigensolver import DEFAULT_TOL, EigenPair, Spectrum, choose_method, solve_gevp
from .grid import Grid
from .permittivity import SymMatrixField

DIV_TOL = 1e-3
MATCH_TOL = 1e-2


class Tag(str, enum.Enum):
    MAXWELL = "Maxwell"
    GRADIENT = "Gradient"
    AMBIGUOUS = "Ambiguous"


@dataclass
class MatchInfo:
    """Evidence behind a tag.

    Attributes:
        div_residual: relative discrete norm of ``div(eps u)``.
        matched_rho: Dirichlet value whose multiple by ``tau`` is closest, if
            within ``match_tol``; otherwise ``None``.
        rho_index: 0-based index of ``matched_rho`` in the Dirichlet list.
        collision: both tests fired, so a Maxwell value coincides with a
            gradient value and the divergence test decided.
    """

    div_residual: float
    matched_rho: float | None = None
    rho_index: int | None = None
    collision: bool = False


@dataclass
class TaggedPair:
    pair: EigenPair
    tag: Tag
    info: MatchInfo


@dataclass
class TaggedSpectrum:
    pairs: list[TaggedPair]
    tau: float
    div_tol: float
    match_tol: float
    eps_fingerprint: str = ""

    def __len__(self):
        return len(self.pairs)

    @property
    def values(self) -> np.ndarray:
        return np.array([p.pair.value for p in self.pairs])

    @property
    def tags(self) -> list[str]:
        return [p.tag.value for p in self.pairs]

    def subset(self, tag: Tag) -> list[TaggedPair]:
        return [p for p in self.pairs if p.tag is tag]

    def maxwell_values(self) -> np.ndarray:
        return np.array([p.pair.value for p in self.subset(Tag.MAXWELL)])

    def collisions(self) -> list[int]:
        return [j for j, p in enumerate(self.pairs) if p.info.collision]


def solve_dirichlet(grid: Grid, eps: SymMatrixField, count: int, *, tol: float = DEFAULT_TOL):
    """Lowest ``count`` eigenpairs of ``-div(eps grad f) = rho f`` with ``f = 0`` on the boundary."""
    scalar = assemble_scalar(grid, eps)
    n = scalar.space.n_free
    pairs = solve_gevp(
        scalar.S,
        scalar.Ms,
        min(count, n),
        method=choose_method(n),
        seed=0,
        tol=tol,
        check_definite=False,
    )
    return pairs


def div_residual(u, system: AssembledSystem) -> float:
    """``sqrt(u.D u / u.M u)``, the relative discrete norm of ``div(eps u)``."""
    u = np.asarray(u, dtype=float)
    den = float(u @ (system.M @ u))
    if not den > 0.0:
        raise ValueError("divergence residual of the zero vector is undefined")
    num = max(float(u @ (system.D @ u)), 0.0)
    return float(np.sqrt(num / den))


def _closest(sigma, targets):
    if targets.size == 0:
        return None, np.inf
    i = int(np.argmin(np.abs(targets - sigma)))
    return i, abs(targets[i] - sigma) / (1.0 + targets[i])


def classify(
    spectrum: Spectrum,
    system: AssembledSystem,
    dirichlet,
    tau: float | None = None,
    *,
    div_tol: float = DIV_TOL,
    match_tol: float = MATCH_TOL,
) -> TaggedSpectrum:
    """Tag every pair of ``spectrum`` as Maxwell, Gradient or Ambiguous.

    Args:
        spectrum: penalised eigenpairs on ``system``.
        system: the assembled matrices the spectrum was computed from.
        dirichlet: scalar eigenvalues ``rho`` (floats or ``EigenPair``) at
            the same permittivity and mesh. May be empty.
        tau: penalty weight; defaults to ``system.tau``.
        div_tol: largest divergence residual accepted as divergence free.
        match_tol: relative tolerance ``|sigma - tau rho| <= match_tol (1 + tau rho)``.

    A pair that passes the divergence test is Maxwell even when it also
    matches a gradient value; the coincidence is flagged in ``info.collision``.
    A pair that passes neither test is Ambiguous. With an empty Dirichlet
    list the divergence test alone decides.
    """
    tau = float(system.tau if tau is None else tau)
    rho = np.array([getattr(r, "value", r) for r in dirichlet], dtype=float)
    targets = tau * rho
    out = []
    for pair in spectrum.pairs:
        r = div_residual(pair.vector, system)
        i, dist = _closest(pair.value, targets)
        matched = i is not None and dist <= match_tol
        div_free = r <= div_tol
        info = MatchInfo(r)
        if matched:
            info.matched_rho = float(rho[i])
            info.rho_index = i
        if div_free:
            tag = Tag.MAXWELL
            info.collision = matched
        elif matched or rho.size == 0:
            tag = Tag.GRADIENT
        else:
            tag = Tag.AMBIGUOUS
        out.append(TaggedPair(pair, tag, info))
    return TaggedSpectrum(out, tau, div_tol, match_tol, spectrum.eps_fingerprint)


def separating_div_tol(rho1: float) -> float:
    """A divergence threshold halfway (in ratio) below the smallest gradient residual.

    The discrete gradient family has residual close to ``sqrt(rho)``, since
    ``div(eps grad f) = -rho f`` and ``|grad f|_eps^2 = rho |f|^2``. Cavity
    modes on a coarse Q1 mesh keep an O(h) residual, so a fixed tiny
    threshold rejects them all; half of ``sqrt(rho1)`` splits the two families
    on any mesh fine enough to resolve ``rho1``.
    """
    if not rho1 > 0.0:
        raise ValueError(f"first Dirichlet eigenvalue must be positive, got {rho1}")
    return 0.5 * float(np.sqrt(rho1))


def select_tau(lambda_max: float, rho1: float) -> float:
    """Penalty weight placing ``tau * rho1`` at twice the top of the Maxwell window."""
    if not rho1 > 0.0:
        raise ValueError(f"first Dirichlet eigenvalue must be positive, got {rho1}")
    if not lambda_max > 0.0:
        raise ValueError(f"window top must be positive, got {lambda_max}")
    return 2.0 * lambda_max / rho1


def write_tagged_csv(tagged: TaggedSpectrum, path) -> None:
    """Write ``index,sigma,tag,div_residual,matched_rho,residual`` rows."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "sigma", "tag", "div_residual", "matched_rho", "residual"])
        for j, p in enumerate(tagged.pairs):
            rho = "" if p.info.matched_rho is None else repr(p.info.matched_rho)
            w.writerow(
                [
                    j + 1,
                    repr(float(p.pair.value)),
                    p.tag.value,
                    f"{p.info.div_residual:.6e}",
                    rho,
                    f"{p.pair.residual:.3e}",
                ]
            )


def maxwell_window(spectrum: Spectrum, tau: float, rho1: float) -> list[EigenPair]:
    """Pairs below half of ``tau * rho1``.

    With ``tau = select_tau(lambda_max, rho1)`` the cut sits at ``lambda_max``
    and keeps a factor-two margin to the first gradient value, so the pairs
    returned are the Maxwell modes of the window regardless of how large
    their discrete divergence residual is on a coarse mesh.
    """
    cut = 0.5 * tau * rho1
    return [p for p in spectrum.pairs if p.value <= cut]
