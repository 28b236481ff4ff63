"""Generalised symmetric eigensolvers for ``A u = sigma B u``.

Three execution paths, picked by problem size unless forced:

``dense``   full LAPACK decomposition, used up to ``DENSE_MAX`` unknowns and
            as the reference oracle in tests;
``lanczos`` shift-invert Lanczos (ARPACK) around a shift below the spectrum,
            with a sparse LU of ``A - shift B``;
``lobpcg``  block LOBPCG preconditioned by smoothed-aggregation AMG, for
            meshes whose LU factor does not fit in memory.

Every path finishes with a Rayleigh-Ritz step on the computed span, which
makes the returned vectors exactly B-orthonormal and well defined inside
degenerate clusters up to an orthogonal rotation.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledSystem
from .errors import ConvergenceError, NumericalError

log = logging.getLogger(__name__)

DENSE_MAX = 3000
LANCZOS_MAX = 25000
DEFAULT_TOL = 1e-9
# residuals above this are reported as a failed solve rather than a loose one
HARD_RESIDUAL = 1e-6


@dataclass
class EigenPair:
    value: float
    vector: np.ndarray = field(repr=False)
    residual: float


@dataclass
class Spectrum:
    pairs: list[EigenPair]
    eps_fingerprint: str
    tau: float
    method: str = ""

    def __len__(self):
        return len(self.pairs)

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.pairs])

    @property
    def vectors(self) -> np.ndarray:
        return np.column_stack([p.vector for p in self.pairs])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([p.residual for p in self.pairs])


def seed_from_fingerprint(fingerprint: str) -> int:
    try:
        return int(fingerprint[:8], 16)
    except (TypeError, ValueError):
        return 0


def _as_sparse(M):
    return M if sp.issparse(M) else sp.csr_matrix(np.asarray(M))


def relative_residuals(A, B, values, vectors) -> np.ndarray:
    AV = A @ vectors
    BV = B @ vectors
    num = np.linalg.norm(AV - BV * values[None, :], axis=0)
    return num / np.linalg.norm(BV, axis=0)


def rayleigh_ritz(A, B, V):
    Ar = V.T @ (A @ V)
    Br = V.T @ (B @ V)
    Ar = 0.5 * (Ar + Ar.T)
    Br = 0.5 * (Br + Br.T)
    vals, U = sla.eigh(Ar, Br)
    return vals, V @ U


def _dense(A, B, count):
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    Bd = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
    try:
        return sla.eigh(Ad, Bd, subset_by_index=[0, count - 1])
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"dense generalised eigensolve failed: {exc}") from exc


def _lanczos(A, B, count, rng, tol):
    A = _as_sparse(A).tocsc()
    B = _as_sparse(B).tocsc()
    # a shift below zero keeps A - shift*B positive definite for PSD A
    shift = -1.0
    v0 = rng.standard_normal(A.shape[0])
    # Lanczos can drop copies of a highly degenerate eigenvalue at the edge of
    # the wanted window, so ask for a padded block and truncate afterwards
    k = min(count + max(6, count // 2), A.shape[0] - 2)
    try:
        vals, vecs = spla.eigsh(
            A, k=k, M=B, sigma=shift, which="LM", v0=v0, tol=tol * 1e-3,
            ncv=min(A.shape[0] - 1, max(2 * k + 1, 40)),
            maxiter=max(50 * k, 300),
        )
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"Lanczos did not converge: {exc}") from exc
    return rayleigh_ritz(A, B, vecs)


def _amg_preconditioner(A, B):
    import pyamg

    S = (A + B).tocsr()
    ml = pyamg.smoothed_aggregation_solver(S, max_coarse=500)
    return ml.aspreconditioner(cycle="V")


def _lobpcg(A, B, count, rng, tol):
    A = _as_sparse(A).tocsr()
    B = _as_sparse(B).tocsr()
    block = count + max(6, count // 2)
    block = min(block, A.shape[0] // 3)
    X = rng.standard_normal((A.shape[0], block))
    P = _amg_preconditioner(A, B)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        _, vecs = spla.lobpcg(
            A, X, B=B, M=P, largest=False, tol=tol, maxiter=max(50 * count, 200)
        )
    return rayleigh_ritz(A, B, vecs)


def choose_method(n: int) -> str:
    if n <= DENSE_MAX:
        return "dense"
    if n <= LANCZOS_MAX:
        return "lanczos"
    return "lobpcg"


def _check_positive_definite(B):
    """Symmetric-mode LU pivots of an SPD matrix are all positive."""
    try:
        lu = spla.splu(
            _as_sparse(B).tocsc(),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:
        raise NumericalError(f"B is singular: {exc}") from exc
    if np.any(lu.U.diagonal() <= 0.0):
        raise NumericalError("B is not positive definite")


def solve_gevp(
    A,
    B,
    count: int,
    *,
    method: str = "auto",
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    check_definite: bool = True,
):
    """Smallest ``count`` eigenpairs of the pencil (A, B) in ascending order.

    ``check_definite`` factorises B once to reject indefinite pencils on the
    sparse paths; callers whose B is a mass matrix of a positive definite
    permittivity can skip it.
    """
    n = A.shape[0]
    if count < 1 or count > n:
        raise ValueError(f"count must lie in [1, {n}], got {count}")
    if method == "auto":
        method = choose_method(n)
    if check_definite and method != "dense":
        _check_positive_definite(B)
    rng = np.random.default_rng(seed)
    if method == "dense":
        vals, vecs = _dense(A, B, count)
    elif method == "lanczos":
        vals, vecs = _lanczos(A, B, count, rng, tol)
    elif method == "lobpcg":
        vals, vecs = _lobpcg(A, B, count, rng, tol)
    else:
        raise ValueError(f"unknown eigensolver method {method!r}")
    vals, vecs = vals[:count], vecs[:, :count]
    res = relative_residuals(A, B, vals, vecs)
    bad = res > HARD_RESIDUAL * np.maximum(1.0, np.abs(vals))
    if np.any(bad):
        raise ConvergenceError(
            f"{method} eigensolve left residuals up to {res.max():.2e} (pairs {np.flatnonzero(bad)})"
        )
    if np.any(res > tol * np.maximum(1.0, np.abs(vals))):
        log.warning("%s eigensolve: max relative residual %.2e above tol %.1e", method, res.max(), tol)
    return [EigenPair(float(v), vecs[:, j].copy(), float(r)) for j, (v, r) in enumerate(zip(vals, res))]


def solve_penalized(system: AssembledSystem, count: int, *, method: str = "auto", tol: float = DEFAULT_TOL):
    """Lowest ``count`` eigenpairs of ``(K + tau D) u = sigma M u``."""
    fp = system.eps.fingerprint()
    pairs = solve_gevp(
        system.A,
        system.M,
        count,
        method=method,
        seed=seed_from_fingerprint(fp),
        tol=tol,
        check_definite=False,
    )
    if method == "auto":
        method = choose_method(system.space.n_free)
    return Spectrum(pairs, fp, system.tau, method)


def orthonormalize(vectors, M, rank_tol: float = 1e-10) -> np.ndarray:
    """Modified Gram-Schmidt in the M inner product, with one reorthogonalisation pass."""
    V = np.array(vectors, dtype=float, copy=True)
    if V.ndim == 1:
        V = V[:, None]
    Mop = M if sp.issparse(M) else np.asarray(M, dtype=float)
    for j in range(V.shape[1]):
        v = V[:, j]
        norm0 = np.sqrt(v @ (Mop @ v))
        for _ in range(2):
            for i in range(j):
                v = v - (V[:, i] @ (Mop @ v)) * V[:, i]
        norm = np.sqrt(v @ (Mop @ v))
        if norm0 == 0.0 or norm <= rank_tol * norm0:
            raise NumericalError(f"vector {j} is numerically dependent on the previous ones")
        V[:, j] = v / norm
    return V


def write_spectrum_csv(spectrum: Spectrum, path, tags=None) -> None:
    """Write ``index,sigma,type_tag,residual`` rows (1-based index)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "sigma", "type_tag", "residual"])
        for j, p in enumerate(spectrum.pairs):
            tag = tags[j] if tags is not None else "untagged"
            w.writerow([j + 1, repr(float(p.value)), tag, f"{p.residual:.3e}"])
