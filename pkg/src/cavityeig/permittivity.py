"""Nodal symmetric-matrix fields (permittivities and perturbation directions).

A field stores one symmetric 3x3 matrix per grid node as its six upper
triangle entries (11, 12, 13, 22, 23, 33) and is trilinearly interpolated
inside each cell, so it is Lipschitz and has an exactly computable gradient.
"""

from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import _kernels as kern
from .errors import DegenerateFieldError
from .grid import Grid

DEGENERATE_FROBENIUS = 1e-12


@functools.lru_cache(maxsize=32)
def element_data(grid: Grid):
    """Reference quadrature data and connectivity, cached per grid."""
    N, dN, w = kern.reference_element(grid.spacing)
    return N, dN, w, grid.cell_nodes()


@functools.lru_cache(maxsize=32)
def nodal_weights(grid: Grid) -> np.ndarray:
    """Lumped (row-sum) Q1 mass, i.e. the integral of each hat function."""
    cn = grid.cell_nodes()
    weights = np.bincount(cn.ravel(), minlength=grid.n_nodes).astype(float)
    return weights * grid.cell_volume / 8.0


def scatter_nodes(grid: Grid, cell_values: np.ndarray) -> np.ndarray:
    """Sum per-cell, per-local-node values ``(nc, 8, k)`` onto nodes ``(n_nodes, k)``."""
    cn = grid.cell_nodes().ravel()
    flat = cell_values.reshape(cn.size, -1)
    out = np.empty((grid.n_nodes, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.bincount(cn, weights=flat[:, j], minlength=grid.n_nodes)
    return out


def sym_to_full(values6: np.ndarray) -> np.ndarray:
    return np.asarray(values6)[..., kern.SYM_INDEX]


def full_to_sym(mats: np.ndarray) -> np.ndarray:
    m = np.asarray(mats)
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    return np.stack([m[..., a, b] for a, b in kern.SYM_PAIRS], axis=-1)


@dataclass(frozen=True, eq=False)
class SymMatrixField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n_nodes, 6):
            raise ValueError(
                f"expected nodal values of shape ({self.grid.n_nodes}, 6), got {vals.shape}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    # construction helpers -------------------------------------------------

    @classmethod
    def constant(cls, grid: Grid, matrix) -> "SymMatrixField":
        mat = np.broadcast_to(np.asarray(matrix, dtype=float), (3, 3))
        if not np.allclose(mat, mat.T, rtol=0, atol=0):
            raise ValueError("matrix must be exactly symmetric")
        row = full_to_sym(mat)
        return cls(grid, np.tile(row, (grid.n_nodes, 1)))

    @classmethod
    def identity(cls, grid: Grid, scale: float = 1.0) -> "SymMatrixField":
        return cls.constant(grid, scale * np.eye(3))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "SymMatrixField":
        """Sample ``fn(points) -> (n, 3, 3)`` at the nodes."""
        mats = np.asarray(fn(grid.node_coords()), dtype=float)
        return cls(grid, full_to_sym(mats))

    @classmethod
    def zeros(cls, grid: Grid) -> "SymMatrixField":
        return cls(grid, np.zeros((grid.n_nodes, 6)))

    # arithmetic -------------------------------------------------------------

    def matrices(self) -> np.ndarray:
        return sym_to_full(self.values)

    def cell_values(self) -> np.ndarray:
        return self.values[self.grid.cell_nodes()]

    def _check(self, other):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other: "SymMatrixField") -> "SymMatrixField":
        self._check(other)
        return SymMatrixField(self.grid, self.values + other.values)

    def __sub__(self, other: "SymMatrixField") -> "SymMatrixField":
        self._check(other)
        return SymMatrixField(self.grid, self.values - other.values)

    def __mul__(self, t: float) -> "SymMatrixField":
        return SymMatrixField(self.grid, float(t) * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "SymMatrixField":
        return SymMatrixField(self.grid, -self.values)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.grid.to_json(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()[:16]

    # serialisation ----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "grid": self.grid.to_json(),
            "symmetry": "upper6",
            "values": [float(v) for v in self.values.ravel()],
        }

    @classmethod
    def from_json(cls, obj) -> "SymMatrixField":
        if obj.get("symmetry", "upper6") != "upper6":
            raise ValueError(f"unsupported symmetry layout {obj.get('symmetry')!r}")
        grid = Grid.from_json(obj["grid"])
        vals = np.asarray(obj["values"], dtype=float)
        if vals.size != 6 * grid.n_nodes:
            raise ValueError(f"expected {6 * grid.n_nodes} values, got {vals.size}")
        return cls(grid, vals.reshape(-1, 6))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "SymMatrixField":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class AdmissibilityBounds:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not (0.0 < self.alpha < self.beta) or not np.isfinite(self.beta):
            raise ValueError(f"need 0 < alpha < beta < inf, got ({self.alpha}, {self.beta})")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class MassConstraint:
    m: float

    def __post_init__(self):
        if not self.m > 0.0:
            raise ValueError(f"mass must be positive, got {self.m}")


@dataclass
class AdmissibilityReport:
    min_eig: np.ndarray
    max_eig: np.ndarray
    grad_max: np.ndarray  # (6,) largest |grad eps_ij| over all cells
    bounds: AdmissibilityBounds
    alpha_violations: np.ndarray
    beta_violations: np.ndarray

    @property
    def spectral_ok(self) -> bool:
        return self.alpha_violations.size == 0 and self.beta_violations.size == 0

    @property
    def gamma_ok(self) -> bool:
        return bool(np.all(self.grad_max <= self.bounds.gamma))

    @property
    def passed(self) -> bool:
        return self.spectral_ok and self.gamma_ok


def _interp(grid: Grid, values: np.ndarray, point):
    (ci, cj, ck), local = grid.locate(point)
    cell = ci + grid.cells[0] * (cj + grid.cells[1] * ck)
    nodes = grid.cell_nodes()[cell]
    N, dN = kern.shape_functions(local[None, :], spacing=grid.spacing)
    vals = values[nodes]
    return N[0] @ vals, np.einsum("ni,ns->is", dN[0], vals)


def evaluate(field: SymMatrixField, point) -> np.ndarray:
    """Interpolated symmetric matrix at ``point``."""
    val, _ = _interp(field.grid, field.values, point)
    return sym_to_full(val)


def divergence(field: SymMatrixField, point) -> np.ndarray:
    """Column-wise divergence of the interpolant; face points use the lower cell."""
    _, grad = _interp(field.grid, field.values, point)
    g = sym_to_full(grad)  # g[i, a, b] = d_i eps_ab
    return np.einsum("iid->d", g)


def cell_gradient_max(field: SymMatrixField) -> np.ndarray:
    """Largest Euclidean gradient norm of each stored entry over all cells.

    The gradient of a trilinear function is extremal at cell corners, where
    it equals the three edge difference quotients meeting there.
    """
    g = field.grid
    nx, ny, nz = g.node_shape
    v = field.values.reshape(nz, ny, nx, 6)
    hx, hy, hz = g.spacing
    dx = np.diff(v, axis=2) / hx  # (nz, ny, nx-1)
    dy = np.diff(v, axis=1) / hy
    dz = np.diff(v, axis=0) / hz
    best = np.zeros(6)
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                gx = dx[c : c + nz - 1, b : b + ny - 1, :]
                gy = dy[c : c + nz - 1, :, a : a + nx - 1]
                gz = dz[:, b : b + ny - 1, a : a + nx - 1]
                norm = np.sqrt(gx**2 + gy**2 + gz**2)
                best = np.maximum(best, norm.reshape(-1, 6).max(axis=0))
    return best


def check_admissibility(field: SymMatrixField, bounds: AdmissibilityBounds, rtol: float = 1e-12):
    eig = np.linalg.eigvalsh(field.matrices())
    lo, hi = eig[:, 0], eig[:, -1]
    slack_a = rtol * max(1.0, bounds.alpha)
    slack_b = rtol * max(1.0, bounds.beta)
    return AdmissibilityReport(
        min_eig=lo,
        max_eig=hi,
        grad_max=cell_gradient_max(field),
        bounds=bounds,
        alpha_violations=np.flatnonzero(lo < bounds.alpha - slack_a),
        beta_violations=np.flatnonzero(hi > bounds.beta + slack_b),
    )


def frobenius_mass(field: SymMatrixField) -> float:
    N, _, w, _ = element_data(field.grid)
    return float(kern.frobenius_cells(field.cell_values(), N, w).sum())


def mass_sensitivity(field: SymMatrixField) -> np.ndarray:
    """Nodal derivative ``(n_nodes, 6)`` of the Frobenius mass w.r.t. stored entries."""
    N, _, w, _ = element_data(field.grid)
    cells = field.cell_values()
    fro = np.sqrt(np.einsum("cqs,s->cq", np.einsum("qn,cns->cqs", N, cells) ** 2, kern.SYM_MULT))
    if fro.min() < DEGENERATE_FROBENIUS:
        raise DegenerateFieldError("permittivity has vanishing Frobenius norm at a quadrature point")
    return scatter_nodes(field.grid, kern.normal_sensitivity(cells, N, w))


def mass_differential(field: SymMatrixField, direction: SymMatrixField) -> float:
    """Directional derivative of the Frobenius mass along ``direction``."""
    field._check(direction)
    return float(np.sum(mass_sensitivity(field) * direction.values))


def project_to_mass(field: SymMatrixField, m: float) -> SymMatrixField:
    v = frobenius_mass(field)
    if not v > 0.0:
        raise ValueError("cannot rescale a field with zero Frobenius mass")
    return field * (m / v)


def _clamped(q, lam, alpha, beta):
    return full_to_sym(np.einsum("nij,nj,nkj->nik", q, np.clip(lam, alpha, beta), q))


def project_spectral_box(field: SymMatrixField, alpha: float, beta: float) -> SymMatrixField:
    """Clamp each nodal spectrum into [alpha, beta], keeping eigenvectors."""
    lam, q = np.linalg.eigh(field.matrices())
    inside = np.all((lam >= alpha) & (lam <= beta), axis=1)
    out = _clamped(q, lam, alpha, beta)
    out[inside] = field.values[inside]
    return SymMatrixField(field.grid, out)


def clamp_to_mass(field: SymMatrixField, alpha: float, beta: float, m: float, xtol=1e-14):
    """Find ``s > 0`` with ``V[box(s * field)] = m`` and return the clamped field.

    ``V[box(s * eps)]`` is continuous and nondecreasing in ``s``, so the
    result sits exactly in the spectral box and on the mass level set up to
    the root-finding tolerance. Returns ``(field, active_mask, scale)`` where
    ``active_mask`` flags nodes with at least one eigenvalue on a bound.
    """
    lam, q = np.linalg.eigh(field.matrices())
    if lam.min() <= 0.0:
        raise ValueError("retraction needs a positive definite field")

    def mass_at(s):
        return frobenius_mass(SymMatrixField(field.grid, _clamped(q, s * lam, alpha, beta)))

    lo_mass = frobenius_mass(SymMatrixField.identity(field.grid, alpha))
    hi_mass = frobenius_mass(SymMatrixField.identity(field.grid, beta))
    if not lo_mass <= m <= hi_mass:
        raise ValueError(f"mass {m} is not attainable inside the band [{lo_mass}, {hi_mass}]")
    s_lo, s_hi = alpha / lam.max(), beta / lam.min()
    if mass_at(s_hi) <= m:
        s = s_hi
    elif mass_at(s_lo) >= m:
        s = s_lo
    else:
        s = brentq(lambda t: mass_at(t) - m, s_lo, s_hi, xtol=xtol * s_hi, rtol=4.0 * np.finfo(float).eps, maxiter=200)
    scaled = s * lam
    clipped = np.clip(scaled, alpha, beta)
    out = _clamped(q, scaled, alpha, beta)
    interior = np.all(clipped == scaled, axis=1)
    out[interior] = s * field.values[interior]
    active = np.any((clipped == alpha) | (clipped == beta), axis=1)
    return SymMatrixField(field.grid, out), active, s


def oscillatory_sequence(
    base: SymMatrixField,
    k: int,
    amplitude,
    bounds: AdmissibilityBounds | None = None,
    phase: float = 0.0,
) -> SymMatrixField:
    """``base + sin(k x1 + phase) / k * amplitude`` sampled at the nodes.

    Bounded in W^{1,inf} uniformly in ``k`` and converging to ``base`` in
    L^inf; the gradients keep oscillating with amplitude ``|amplitude|``.
    A nonzero ``phase`` avoids sampling only the zeros of the sine when
    ``k`` times the node spacing is a multiple of pi.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    amp = np.asarray(amplitude, dtype=float)
    if not np.array_equal(amp, amp.T):
        raise ValueError("amplitude must be symmetric")
    x1 = base.grid.node_coords()[:, 0]
    wave = np.sin(k * x1 + phase) / k
    out = SymMatrixField(base.grid, base.values + wave[:, None] * full_to_sym(amp)[None, :])
    if bounds is not None:
        report = check_admissibility(out, bounds)
        if not report.spectral_ok:
            raise ValueError(f"oscillatory field with k={k} leaves the [alpha, beta] band")
    return out


def _random_symmetric(rng) -> np.ndarray:
    a = rng.standard_normal((3, 3))
    return 0.5 * (a + a.T)


def random_smooth_field(
    grid: Grid,
    bounds: AdmissibilityBounds,
    rng,
    *,
    center: float | None = None,
    modes: int = 4,
    max_wavenumber: int = 2,
    margin: float = 0.1,
) -> SymMatrixField:
    """Random admissible field ``center * I + sum_m A_m cos(pi k_m . x / L + phi_m)``.

    The amplitude is drawn so that every nodal spectrum stays at least
    ``margin * (beta - alpha)`` inside the band, and it is shrunk further if
    an entry's gradient would exceed ``0.9 * gamma``.

    Args:
        center: mean eigenvalue; defaults to the middle of the band.
        modes: number of cosine modes.
        max_wavenumber: largest integer wave number per axis.
        margin: relative distance kept from ``alpha`` and ``beta``.
    """
    lo = bounds.alpha + margin * (bounds.beta - bounds.alpha)
    hi = bounds.beta - margin * (bounds.beta - bounds.alpha)
    c = 0.5 * (lo + hi) if center is None else float(center)
    if not lo < c < hi:
        raise ValueError(f"center {c} is not inside the shrunken band ({lo}, {hi})")
    x = (grid.node_coords() - np.asarray(grid.domain.origin)) / np.asarray(grid.domain.lengths)
    pert = np.zeros((grid.n_nodes, 6))
    for _ in range(modes):
        k = rng.integers(0, max_wavenumber + 1, size=3)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.cos(np.pi * (x @ k) + phase)
        pert += wave[:, None] * full_to_sym(_random_symmetric(rng))[None, :]
    spread = np.abs(np.linalg.eigvalsh(sym_to_full(pert))).max()
    if spread == 0.0:
        return SymMatrixField.identity(grid, c)
    amp = rng.uniform(0.5, 1.0) * min(c - lo, hi - c) / spread
    grad = cell_gradient_max(SymMatrixField(grid, amp * pert)).max()
    if grad > 0.9 * bounds.gamma:
        amp *= 0.9 * bounds.gamma / grad
    base = SymMatrixField.identity(grid, c)
    return SymMatrixField(grid, base.values + amp * pert)
