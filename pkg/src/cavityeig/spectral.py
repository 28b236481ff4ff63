"""Elementary symmetric functions of cavity eigenvalues and their derivatives.

For an index set ``F`` split into clusters ``F_1, ..., F_n`` of (numerically)
equal eigenvalues, ``Lambda_{F,s}`` is the degree-``s`` elementary symmetric
polynomial of ``{lambda_j : j in F}``. It stays smooth in the permittivity
through crossings inside ``F``, and its derivative only involves the sums
``sum_l E_l (x) E_l`` over each cluster, which do not depend on the basis
chosen inside a degenerate eigenspace.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .assembly import AssembledSystem, assemble_system
from .classification import maxwell_window, select_tau, solve_dirichlet
from .eigensolver import DEFAULT_TOL, solve_penalized
from .errors import ClusterError
from .permittivity import SymMatrixField, element_data, nodal_weights, scatter_nodes

CLUSTER_TOL = 1e-6


@dataclass(frozen=True)
class SymmetricFunctionSpec:
    """``Lambda_{F,s}`` with 1-based eigenvalue indices ``F``."""

    F: tuple[int, ...]
    s: int

    def __post_init__(self):
        F = tuple(sorted(int(j) for j in self.F))
        if not F or F[0] < 1 or len(set(F)) != len(F):
            raise ValueError(f"F must be a nonempty set of positive indices, got {self.F}")
        object.__setattr__(self, "F", F)
        if not 1 <= self.s <= len(F):
            raise ValueError(f"s must lie in [1, {len(F)}], got {self.s}")


@dataclass
class ClusterPartition:
    """Clusters of ``F`` with their mean values and eigenvector blocks.

    Attributes:
        F: sorted 1-based indices.
        groups: one tuple of indices per cluster, in ascending order.
        values: cluster value (mean of the member eigenvalues) per group.
        raw: the individual eigenvalues for every index in ``F``.
        basis: per group, an ``(n_free, |F_k|)`` block of M-orthonormal vectors.
        system: the assembled system the eigenpairs belong to.
    """

    F: tuple[int, ...]
    groups: list[tuple[int, ...]]
    values: list[float]
    raw: dict[int, float]
    basis: list[np.ndarray] = field(repr=False)
    system: AssembledSystem | None = field(default=None, repr=False)

    @property
    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    def rotated(self, rng) -> "ClusterPartition":
        """Same partition with a random orthogonal change of basis inside every group."""
        blocks = []
        for B in self.basis:
            q, _ = np.linalg.qr(rng.standard_normal((B.shape[1], B.shape[1])))
            blocks.append(B @ q)
        return ClusterPartition(self.F, self.groups, self.values, self.raw, blocks, self.system)


def detect_clusters(values, F, *, vectors=None, cluster_tol: float = CLUSTER_TOL, system=None):
    """Group the eigenvalues indexed by ``F`` into clusters.

    Args:
        values: ascending Maxwell eigenvalues, position ``j - 1`` holding ``lambda_j``.
        F: 1-based indices.
        vectors: optional ``(n_free, len(values))`` eigenvectors, column per value.
        cluster_tol: neighbours with ``|lambda_{i+1} - lambda_i| <= cluster_tol (1 + lambda_i)``
            belong to the same cluster.
        system: stored on the partition for the differential.

    Raises:
        ClusterError: a cluster contains indices both inside and outside ``F``,
            so ``Lambda_{F,s}`` is not differentiable there.
        ValueError: fewer values than ``max(F) + 1`` were supplied, so the
            neighbour above ``F`` cannot be checked.
    """
    lam = np.asarray(values, dtype=float)
    F = tuple(sorted(int(j) for j in F))
    if lam.size < F[-1] + 1:
        raise ValueError(f"need at least {F[-1] + 1} eigenvalues to delimit F={F}, got {lam.size}")
    # maximal chains of near-equal neighbours, 1-based
    chains, current = [], [1]
    for j in range(2, lam.size + 1):
        if abs(lam[j - 1] - lam[j - 2]) <= cluster_tol * (1.0 + abs(lam[j - 2])):
            current.append(j)
        else:
            chains.append(current)
            current = [j]
    chains.append(current)
    inF = set(F)
    groups = []
    for chain in chains:
        members = [j for j in chain if j in inF]
        if not members:
            continue
        if len(members) != len(chain):
            outside = [j for j in chain if j not in inF]
            raise ClusterError(
                f"eigenvalues {members} in F collide with {outside} outside F "
                f"(values {[float(lam[j - 1]) for j in chain]})"
            )
        groups.append(tuple(chain))
    group_values = [float(np.mean(lam[[j - 1 for j in g]])) for g in groups]
    basis = []
    if vectors is not None:
        V = np.asarray(vectors)
        basis = [V[:, [j - 1 for j in g]] for g in groups]
    raw = {j: float(lam[j - 1]) for j in F}
    return ClusterPartition(F, groups, group_values, raw, basis, system)


def elementary_symmetric(values, s: int) -> float:
    """``e_s`` of ``values`` by the standard one-pass recurrence."""
    e = np.zeros(s + 1)
    e[0] = 1.0
    for v in values:
        e[1:] = e[1:] + v * e[:-1]
    return float(e[s])


def sym_func(partition: ClusterPartition, s: int) -> float:
    """``Lambda_{F,s}`` with every cluster value repeated ``|F_k|`` times."""
    vals = [v for v, n in zip(partition.values, partition.sizes) for _ in range(n)]
    return elementary_symmetric(vals, s)


def sym_func_raw(partition: ClusterPartition, s: int) -> float:
    """``Lambda_{F,s}`` of the individual eigenvalues (no cluster averaging)."""
    return elementary_symmetric([partition.raw[j] for j in partition.F], s)


def _binom(m, r):
    return math.comb(m, r) if 0 <= r <= m else 0


def coeff_ck(partition: ClusterPartition, s: int, k: int) -> float:
    """Coefficient ``c_k`` (``k`` 1-based) of the differential of ``Lambda_{F,s}``.

    Sum over compositions ``(s_1, ..., s_n)`` with ``0 <= s_j <= |F_j|`` and
    total ``s`` of ``C(|F_k|-1, s_k-1) l_k^{s_k} prod_{j != k} C(|F_j|, s_j) l_j^{s_j}``.
    """
    sizes, lam = partition.sizes, partition.values
    n = len(sizes)
    if not 1 <= k <= n:
        raise ValueError(f"cluster index must lie in [1, {n}], got {k}")
    kk = k - 1
    terms = []
    for comp in itertools.product(*[range(m + 1) for m in sizes]):
        if sum(comp) != s:
            continue
        t = _binom(sizes[kk] - 1, comp[kk] - 1) * lam[kk] ** comp[kk]
        if t == 0:
            continue
        for j in range(n):
            if j != kk:
                t *= _binom(sizes[j], comp[j]) * lam[j] ** comp[j]
        terms.append(t)
    return math.fsum(terms)


def _cell_modes(partition: ClusterPartition, vec):
    space = partition.system.space
    nodal = space.expand(vec)
    return nodal[space.grid.cell_nodes()]


def sensitivity(partition: ClusterPartition, s: int, *, include_penalty: bool = False) -> np.ndarray:
    """Nodal coefficients ``g`` with ``dLambda[eta] = sum(g * eta.values)``.

    Without the penalty term this is the continuum formula
    ``-sum_k c_k sum_{l in F_k} int eta E_l . E_l``. With it, the derivative
    of the penalty matrix along ``eta`` is added, which makes the result the
    exact derivative of the discrete eigenvalues; the extra term vanishes
    for modes whose discrete divergence is zero.
    """
    if partition.system is None or not partition.basis:
        raise ValueError("partition carries no eigenvectors or system")
    grid = partition.system.space.grid
    N, dN, w, cn = element_data(grid)
    eps_cells = partition.system.eps.values[cn] if include_penalty else None
    total = np.zeros((grid.n_nodes, 6))
    for k, block in enumerate(partition.basis, start=1):
        ck = coeff_ck(partition, s, k)
        lam = partition.values[k - 1]
        acc = np.zeros((cn.shape[0], 8, 6))
        pen = np.zeros_like(acc)
        for l in range(block.shape[1]):
            u = _cell_modes(partition, block[:, l])
            acc += kern.outer_sensitivity(u, N, w)
            if include_penalty:
                pen += kern.penalty_sensitivity(eps_cells, u, N, dN, w)
        total -= ck * scatter_nodes(grid, acc)
        if include_penalty:
            total += (ck / lam) * partition.system.tau * scatter_nodes(grid, pen)
    return total


def differential(partition: ClusterPartition, s: int, direction: SymMatrixField, *, include_penalty=False) -> float:
    """``dLambda_{F,s}[direction]``."""
    g = sensitivity(partition, s, include_penalty=include_penalty)
    return float(np.sum(g * direction.values))


def riesz_field(grid, g: np.ndarray) -> SymMatrixField:
    """Field ``G`` with ``sum_n m_n G_n : eta_n = sum(g * eta.values)`` (lumped pairing)."""
    m = nodal_weights(grid)
    return SymMatrixField(grid, g / (m[:, None] * kern.SYM_MULT[None, :]))


def lumped_pairing(a: SymMatrixField, b: SymMatrixField) -> float:
    """``sum_n m_n A_n : B_n``, the lumped L2 Frobenius product of two nodal fields."""
    a._check(b)
    m = nodal_weights(a.grid)
    return float(np.sum(m[:, None] * kern.SYM_MULT[None, :] * a.values * b.values))


def gradient_field(partition: ClusterPartition, s: int, *, include_penalty=False) -> SymMatrixField:
    """Riesz representative of ``dLambda_{F,s}`` for the lumped pairing."""
    grid = partition.system.space.grid
    return riesz_field(grid, sensitivity(partition, s, include_penalty=include_penalty))


def normalization_value(partition: ClusterPartition, s: int) -> float:
    """``-sum_k c_k |F_k|``, the derivative along the permittivity itself."""
    return -math.fsum(coeff_ck(partition, s, k) * n for k, n in enumerate(partition.sizes, start=1))


def partition_for(
    eps: SymMatrixField,
    F,
    tau: float,
    rho1: float,
    *,
    cluster_tol: float = CLUSTER_TOL,
    method: str = "auto",
    tol: float = DEFAULT_TOL,
    extra: int = 4,
) -> ClusterPartition:
    """Assemble, solve and cluster the Maxwell eigenpairs needed for ``F``.

    Maxwell modes are taken from the window below ``tau * rho1 / 2`` (see
    :func:`cavityeig.classification.maxwell_window`).
    """
    F = tuple(sorted(F))
    system = assemble_system(eps.grid, eps, tau)
    count = F[-1] + extra
    while True:
        spectrum = solve_penalized(system, min(count, system.space.n_free), method=method, tol=tol)
        pairs = maxwell_window(spectrum, tau, rho1)
        lam = np.array([p.value for p in pairs])
        if lam.size < F[-1] + 1:
            raise ClusterError(
                f"only {lam.size} Maxwell values below {0.5 * tau * rho1:.4g}; increase tau for F={F}"
            )
        try:
            vecs = np.column_stack([p.vector for p in pairs])
            return detect_clusters(lam, F, vectors=vecs, cluster_tol=cluster_tol, system=system)
        except ValueError:
            if len(pairs) < len(spectrum) or count >= system.space.n_free:
                raise
            count *= 2


def window_tau(eps: SymMatrixField, j: int, tol: float = DEFAULT_TOL):
    """Penalty weight whose Maxwell window reaches twice ``lambda_j[eps]``.

    Returns ``(tau, rho1)`` with ``tau = select_tau(2 lambda_j, rho1)``, so the
    window cut ``tau rho1 / 2`` equals ``2 lambda_j``. The value ``lambda_j``
    is read off a probe solve whose own weight keeps ``tau rho1`` above
    ``4 lambda_j``, so it is not a gradient value.
    """
    rho1 = solve_dirichlet(eps.grid, eps, 1, tol=tol)[0].value
    probe_tau = 1.0
    while True:
        system = assemble_system(eps.grid, eps, probe_tau)
        top = solve_penalized(system, j, tol=tol).values[j - 1]
        if probe_tau * rho1 > 4.0 * top:
            break
        probe_tau = 8.0 * top / rho1
    return select_tau(2.0 * top, rho1), rho1


@dataclass
class FDReport:
    """Central-difference check of ``dLambda_{F,s}`` along one direction."""

    analytic: float
    steps: list[float]
    fd: list[float]
    rel_errors: list[float]
    ratios: list[float]
    quadratic: bool

    @property
    def best(self) -> float:
        return min(self.rel_errors)

    def to_json(self) -> dict:
        return {
            "analytic": self.analytic,
            "steps": self.steps,
            "fd": self.fd,
            "rel_errors": self.rel_errors,
            "ratios": self.ratios,
            "quadratic": self.quadratic,
            "best": self.best,
        }


ROUNDOFF_FLOOR = 1e-9


def _is_quadratic(steps, errors):
    """True if some pair of consecutive steps shows error ratio near ``(t1/t2)^2``.

    Pairs whose smaller error already sits at the roundoff floor are skipped.
    """
    seen = False
    for (t1, e1), (t2, e2) in zip(zip(steps, errors), zip(steps[1:], errors[1:])):
        if e2 < ROUNDOFF_FLOOR or e1 < ROUNDOFF_FLOOR:
            continue
        expected = (t1 / t2) ** 2
        seen = True
        if 0.5 * expected <= e1 / e2 <= 2.0 * expected:
            return True
    return not seen


def fd_check(
    eps: SymMatrixField,
    spec: SymmetricFunctionSpec,
    direction: SymMatrixField,
    steps=(1e-3, 1e-4, 1e-5),
    *,
    tau: float,
    rho1: float,
    bounds=None,
    include_penalty: bool = True,
    cluster_tol: float = CLUSTER_TOL,
    tol: float = DEFAULT_TOL,
    path=None,
) -> FDReport:
    """Compare ``(Lambda(eps + t eta) - Lambda(eps - t eta)) / 2t`` with the analytic differential.

    Args:
        path: optional map ``t -> field`` replacing the straight line
            ``eps + t * direction``; the analytic value is still taken along
            ``direction``, so ``path`` must have that tangent at ``t = 0``.
        bounds: if given, every perturbed field must be admissible.
    """
    from .permittivity import check_admissibility

    base = partition_for(eps, spec.F, tau, rho1, cluster_tol=cluster_tol, tol=tol)
    analytic = differential(base, spec.s, direction, include_penalty=include_penalty)

    def value(field_t):
        if bounds is not None and not check_admissibility(field_t, bounds).passed:
            raise ValueError("perturbed permittivity left the admissible set")
        system = assemble_system(field_t.grid, field_t, tau)
        spectrum = solve_penalized(system, spec.F[-1] + 4, tol=tol)
        lam = np.array([p.value for p in maxwell_window(spectrum, tau, rho1)])
        return elementary_symmetric([lam[j - 1] for j in spec.F], spec.s)

    line = path if path is not None else (lambda t: eps + direction * t)
    fd, errs = [], []
    for t in steps:
        d = (value(line(t)) - value(line(-t))) / (2.0 * t)
        fd.append(float(d))
        errs.append(float(abs(d - analytic) / max(abs(analytic), 1e-300)))
    ratios = [e1 / e2 if e2 > 0 else float("inf") for e1, e2 in zip(errs, errs[1:])]
    return FDReport(float(analytic), list(map(float, steps)), fd, errs, ratios, _is_quadratic(steps, errs))
