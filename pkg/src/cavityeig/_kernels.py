"""Per-cell integration kernels for trilinear (Q1) hexahedra.

Every kernel exists twice: a numba ``@njit`` loop version and a vectorised
numpy version. Set ``CAVITYEIG_NUMBA=0`` before import to force the numpy
path (also used automatically when numba is missing). Both paths must agree
to rounding; ``tests/test_kernels.py`` checks this and ``benchmarks/`` times
them.

Conventions shared by all kernels:

* ``eps`` arrays hold nodal permittivity per cell, shape ``(nc, 8, 6)``, in
  upper-triangle order (11, 12, 13, 22, 23, 33).
* ``N[q, a]`` and ``dN[q, a, d]`` are shape values and physical derivatives at
  the 8 Gauss points; ``w`` is the (uniform) quadrature weight.
* Vector element unknowns are ordered ``3 * local_node + component``.
* Sensitivities are derivatives with respect to the 6 stored entries of a
  nodal symmetric matrix; off-diagonal entries count both (i, j) and (j, i).
"""

from __future__ import annotations

import os

import numpy as np

SYM_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
SYM_INDEX = np.array([[0, 1, 2], [1, 3, 4], [2, 4, 5]])
SYM_MULT = np.array([1.0, 2.0, 2.0, 1.0, 2.0, 1.0])

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CAVITYEIG_NUMBA", "1").lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def reference_element(spacing):
    """Gauss points, shape values and physical gradients on one cell."""
    h = np.asarray(spacing, dtype=float)
    g = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
    pts = np.array([(g[a], g[b], g[c]) for c in (0, 1) for b in (0, 1) for a in (0, 1)])
    bits = np.array([(a, b, c) for c in (0, 1) for b in (0, 1) for a in (0, 1)])
    N, dN = shape_functions(pts, bits, h)
    w = float(np.prod(h)) / 8.0
    return N, dN, w


def shape_functions(local_pts, bits=None, spacing=(1.0, 1.0, 1.0)):
    """Trilinear shape values ``(P, 8)`` and physical gradients ``(P, 8, 3)``."""
    if bits is None:
        bits = np.array([(a, b, c) for c in (0, 1) for b in (0, 1) for a in (0, 1)])
    h = np.asarray(spacing, dtype=float)
    xi = np.atleast_2d(np.asarray(local_pts, dtype=float))
    # 1D factors per point, node and axis
    f = np.where(bits[None, :, :] == 1, xi[:, None, :], 1.0 - xi[:, None, :])
    df = np.where(bits[None, :, :] == 1, 1.0, -1.0) * np.ones_like(f)
    N = f.prod(axis=2)
    dN = np.empty(f.shape)
    for d in range(3):
        others = [e for e in range(3) if e != d]
        dN[:, :, d] = df[:, :, d] * f[:, :, others[0]] * f[:, :, others[1]] / h[d]
    return N, dN


def curl_matrix(dN):
    """``C[q, r, 3a + c]`` maps element unknowns to curl component r."""
    nq = dN.shape[0]
    C = np.zeros((nq, 3, 24))
    for a in range(8):
        dx, dy, dz = dN[:, a, 0], dN[:, a, 1], dN[:, a, 2]
        # curl = (d2 u3 - d3 u2, d3 u1 - d1 u3, d1 u2 - d2 u1)
        C[:, 0, 3 * a + 2] = dy
        C[:, 0, 3 * a + 1] = -dz
        C[:, 1, 3 * a + 0] = dz
        C[:, 1, 3 * a + 2] = -dx
        C[:, 2, 3 * a + 1] = dx
        C[:, 2, 3 * a + 0] = -dy
    return C


def curlcurl_element(N, dN, w):
    C = curl_matrix(dN)
    return w * np.einsum("qrm,qrn->mn", C, C)


def scalar_mass_element(N, w):
    return w * N.T @ N


# ---------------------------------------------------------------------------
# numpy implementations


def _full(eps6):
    return eps6[..., SYM_INDEX]


def _np_quad_eps(eps, N, dN):
    eq = np.einsum("qn,cns->cqs", N, eps)
    geps = np.einsum("qni,cns->cqis", dN, eps)
    gfull = _full(geps)  # (nc, q, i, a, b) = d_i eps_ab
    div = np.einsum("cqiid->cqd", gfull)
    return _full(eq), div


def _np_mass_elements(eps, N, dN, w):
    ef, _ = _np_quad_eps(eps, N, dN)
    nc = eps.shape[0]
    Me = w * np.einsum("cqij,qa,qb->caibj", ef, N, N)
    return Me.reshape(nc, 24, 24)


def _np_penalty_b(eps, N, dN):
    ef, div = _np_quad_eps(eps, N, dN)
    B = np.einsum("cqid,qbi->cqbd", ef, dN) + div[:, :, None, :] * N[None, :, :, None]
    return B.reshape(eps.shape[0], N.shape[0], 24)


def _np_penalty_elements(eps, N, dN, w):
    B = _np_penalty_b(eps, N, dN)
    return w * np.einsum("cqm,cqn->cmn", B, B)


def _np_scalar_stiffness_elements(eps, N, dN, w):
    ef, _ = _np_quad_eps(eps, N, dN)
    return w * np.einsum("cqij,qai,qbj->cab", ef, dN, dN)


def _np_frobenius_cells(eps, N, w):
    eq = np.einsum("qn,cns->cqs", N, eps)
    fro = np.sqrt(np.einsum("cqs,s->cq", eq * eq, SYM_MULT))
    return w * fro.sum(axis=1)


def _np_normal_sensitivity(eps, N, w):
    eq = np.einsum("qn,cns->cqs", N, eps)
    fro = np.sqrt(np.einsum("cqs,s->cq", eq * eq, SYM_MULT))
    return w * np.einsum("qn,cqs->cns", N, eq / fro[:, :, None]) * SYM_MULT


def _np_outer_sensitivity(u, N, w):
    uq = np.einsum("qn,cnd->cqd", N, u)
    outer = np.stack([uq[:, :, a] * uq[:, :, b] for a, b in SYM_PAIRS], axis=-1)
    return w * np.einsum("qn,cqs->cns", N, outer) * SYM_MULT


def _np_penalty_sensitivity(eps, u, N, dN, w):
    B = _np_penalty_b(eps, N, dN)
    divu = np.einsum("cqm,cm->cq", B, u.reshape(u.shape[0], 24))
    uq = np.einsum("qn,cnd->cqd", N, u)
    Du = np.einsum("qni,cnj->cqij", dN, u)
    nc = u.shape[0]
    out = np.empty((nc, 8, 6))
    for s, (a, b) in enumerate(SYM_PAIRS):
        if a == b:
            Y = Du[:, :, a, a]
            Z = dN[None, :, :, a] * uq[:, :, None, a]
        else:
            Y = Du[:, :, a, b] + Du[:, :, b, a]
            Z = dN[None, :, :, a] * uq[:, :, None, b] + dN[None, :, :, b] * uq[:, :, None, a]
        integrand = N[None, :, :] * Y[:, :, None] + Z
        out[:, :, s] = 2.0 * w * np.einsum("cq,cqn->cn", divu, integrand)
    return out


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:
    _PAIRS = np.array(SYM_PAIRS, dtype=np.int64)
    _SIDX = SYM_INDEX.astype(np.int64)

    @numba.njit(cache=True)
    def _nb_eps_at(eps_c, N, dN, q, ef, div):
        for s in range(6):
            v = 0.0
            for n in range(8):
                v += N[q, n] * eps_c[n, s]
            a = _PAIRS[s, 0]
            b = _PAIRS[s, 1]
            ef[a, b] = v
            ef[b, a] = v
        for d in range(3):
            div[d] = 0.0
        for i in range(3):
            for d in range(3):
                s = _SIDX[i, d]
                g = 0.0
                for n in range(8):
                    g += dN[q, n, i] * eps_c[n, s]
                div[d] += g

    @numba.njit(cache=True)
    def _nb_mass_elements(eps, N, dN, w):
        nc = eps.shape[0]
        out = np.zeros((nc, 24, 24))
        ef = np.empty((3, 3))
        div = np.empty(3)
        for c in range(nc):
            for q in range(8):
                _nb_eps_at(eps[c], N, dN, q, ef, div)
                for a in range(8):
                    for b in range(8):
                        nn = w * N[q, a] * N[q, b]
                        for i in range(3):
                            for j in range(3):
                                out[c, 3 * a + i, 3 * b + j] += nn * ef[i, j]
        return out

    @numba.njit(cache=True)
    def _nb_penalty_b(eps_c, N, dN, q, ef, div, B):
        _nb_eps_at(eps_c, N, dN, q, ef, div)
        for b in range(8):
            for d in range(3):
                v = div[d] * N[q, b]
                for i in range(3):
                    v += ef[i, d] * dN[q, b, i]
                B[3 * b + d] = v

    @numba.njit(cache=True)
    def _nb_penalty_elements(eps, N, dN, w):
        nc = eps.shape[0]
        out = np.zeros((nc, 24, 24))
        ef = np.empty((3, 3))
        div = np.empty(3)
        B = np.empty(24)
        for c in range(nc):
            for q in range(8):
                _nb_penalty_b(eps[c], N, dN, q, ef, div, B)
                for m in range(24):
                    bm = w * B[m]
                    for n in range(24):
                        out[c, m, n] += bm * B[n]
        return out

    @numba.njit(cache=True)
    def _nb_scalar_stiffness_elements(eps, N, dN, w):
        nc = eps.shape[0]
        out = np.zeros((nc, 8, 8))
        ef = np.empty((3, 3))
        div = np.empty(3)
        t = np.empty(3)
        for c in range(nc):
            for q in range(8):
                _nb_eps_at(eps[c], N, dN, q, ef, div)
                for a in range(8):
                    for j in range(3):
                        t[j] = 0.0
                        for i in range(3):
                            t[j] += ef[i, j] * dN[q, a, i]
                    for b in range(8):
                        v = 0.0
                        for j in range(3):
                            v += t[j] * dN[q, b, j]
                        out[c, a, b] += w * v
        return out

    @numba.njit(cache=True)
    def _nb_frobenius_cells(eps, N, w):
        nc = eps.shape[0]
        out = np.zeros(nc)
        for c in range(nc):
            for q in range(8):
                acc = 0.0
                for s in range(6):
                    v = 0.0
                    for n in range(8):
                        v += N[q, n] * eps[c, n, s]
                    mult = 1.0 if _PAIRS[s, 0] == _PAIRS[s, 1] else 2.0
                    acc += mult * v * v
                out[c] += w * np.sqrt(acc)
        return out

    @numba.njit(cache=True)
    def _nb_normal_sensitivity(eps, N, w):
        nc = eps.shape[0]
        out = np.zeros((nc, 8, 6))
        vals = np.empty(6)
        for c in range(nc):
            for q in range(8):
                acc = 0.0
                for s in range(6):
                    v = 0.0
                    for n in range(8):
                        v += N[q, n] * eps[c, n, s]
                    vals[s] = v
                    mult = 1.0 if _PAIRS[s, 0] == _PAIRS[s, 1] else 2.0
                    acc += mult * v * v
                fro = np.sqrt(acc)
                for s in range(6):
                    mult = 1.0 if _PAIRS[s, 0] == _PAIRS[s, 1] else 2.0
                    for n in range(8):
                        out[c, n, s] += w * mult * N[q, n] * vals[s] / fro
        return out

    @numba.njit(cache=True)
    def _nb_outer_sensitivity(u, N, w):
        nc = u.shape[0]
        out = np.zeros((nc, 8, 6))
        uq = np.empty(3)
        for c in range(nc):
            for q in range(8):
                for d in range(3):
                    v = 0.0
                    for n in range(8):
                        v += N[q, n] * u[c, n, d]
                    uq[d] = v
                for s in range(6):
                    a = _PAIRS[s, 0]
                    b = _PAIRS[s, 1]
                    mult = 1.0 if a == b else 2.0
                    val = w * mult * uq[a] * uq[b]
                    for n in range(8):
                        out[c, n, s] += N[q, n] * val
        return out

    @numba.njit(cache=True)
    def _nb_penalty_sensitivity(eps, u, N, dN, w):
        nc = u.shape[0]
        out = np.zeros((nc, 8, 6))
        ef = np.empty((3, 3))
        div = np.empty(3)
        B = np.empty(24)
        uq = np.empty(3)
        Du = np.empty((3, 3))
        for c in range(nc):
            for q in range(8):
                _nb_penalty_b(eps[c], N, dN, q, ef, div, B)
                divu = 0.0
                for n in range(8):
                    for d in range(3):
                        divu += B[3 * n + d] * u[c, n, d]
                for d in range(3):
                    v = 0.0
                    for n in range(8):
                        v += N[q, n] * u[c, n, d]
                    uq[d] = v
                for i in range(3):
                    for j in range(3):
                        v = 0.0
                        for n in range(8):
                            v += dN[q, n, i] * u[c, n, j]
                        Du[i, j] = v
                scale = 2.0 * w * divu
                for s in range(6):
                    a = _PAIRS[s, 0]
                    b = _PAIRS[s, 1]
                    for n in range(8):
                        if a == b:
                            val = N[q, n] * Du[a, a] + dN[q, n, a] * uq[a]
                        else:
                            val = (
                                N[q, n] * (Du[a, b] + Du[b, a])
                                + dN[q, n, a] * uq[b]
                                + dN[q, n, b] * uq[a]
                            )
                        out[c, n, s] += scale * val
        return out


def _contig(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def mass_elements(eps, N, dN, w, *, backend=None):
    fn = _select(backend, _np_mass_elements, "_nb_mass_elements")
    return fn(_contig(eps), _contig(N), _contig(dN), float(w))


def penalty_elements(eps, N, dN, w, *, backend=None):
    fn = _select(backend, _np_penalty_elements, "_nb_penalty_elements")
    return fn(_contig(eps), _contig(N), _contig(dN), float(w))


def scalar_stiffness_elements(eps, N, dN, w, *, backend=None):
    fn = _select(backend, _np_scalar_stiffness_elements, "_nb_scalar_stiffness_elements")
    return fn(_contig(eps), _contig(N), _contig(dN), float(w))


def frobenius_cells(eps, N, w, *, backend=None):
    fn = _select(backend, _np_frobenius_cells, "_nb_frobenius_cells")
    return fn(_contig(eps), _contig(N), float(w))


def normal_sensitivity(eps, N, w, *, backend=None):
    fn = _select(backend, _np_normal_sensitivity, "_nb_normal_sensitivity")
    return fn(_contig(eps), _contig(N), float(w))


def outer_sensitivity(u, N, w, *, backend=None):
    fn = _select(backend, _np_outer_sensitivity, "_nb_outer_sensitivity")
    return fn(_contig(u), _contig(N), float(w))


def penalty_sensitivity(eps, u, N, dN, w, *, backend=None):
    fn = _select(backend, _np_penalty_sensitivity, "_nb_penalty_sensitivity")
    return fn(_contig(eps), _contig(u), _contig(N), _contig(dN), float(w))


def _select(backend, np_fn, nb_name):
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    if backend == "numpy":
        return np_fn
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return globals()[nb_name]
    raise ValueError(f"unknown backend {backend!r}")


def active_backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
