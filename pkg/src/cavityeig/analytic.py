"""Closed-form spectra on boxes with identity permittivity (separation of variables)."""

from __future__ import annotations

import itertools

import numpy as np


def _index_range(lengths, cutoff):
    return [range(0, int(np.floor(L * np.sqrt(cutoff) / np.pi)) + 1) for L in lengths]


def maxwell_eigenvalues(lengths=(np.pi, np.pi, np.pi), cutoff=30.0) -> np.ndarray:
    """Cavity eigenvalues ``sum (m_i pi / L_i)^2`` up to ``cutoff`` with multiplicity.

    For indices with three nonzero entries the mode space is two-dimensional
    (divergence-free polarisations); with exactly one zero index it is
    one-dimensional; otherwise the field vanishes.
    """
    out = []
    for idx in itertools.product(*_index_range(lengths, cutoff)):
        nonzero = sum(1 for i in idx if i > 0)
        mult = {3: 2, 2: 1}.get(nonzero, 0)
        if mult == 0:
            continue
        lam = sum((i * np.pi / L) ** 2 for i, L in zip(idx, lengths))
        if lam <= cutoff * (1 + 1e-12):
            out.extend([lam] * mult)
    return np.sort(np.array(out))


def dirichlet_eigenvalues(lengths=(np.pi, np.pi, np.pi), cutoff=30.0) -> np.ndarray:
    """Dirichlet Laplacian eigenvalues with all indices positive."""
    out = []
    for idx in itertools.product(*_index_range(lengths, cutoff)):
        if min(idx) < 1:
            continue
        lam = sum((i * np.pi / L) ** 2 for i, L in zip(idx, lengths))
        if lam <= cutoff * (1 + 1e-12):
            out.append(lam)
    return np.sort(np.array(out))


def cavity_mode(points, indices, amplitudes, lengths=(np.pi, np.pi, np.pi)) -> np.ndarray:
    """Evaluate ``(a cos sin sin, b sin cos sin, c sin sin cos)`` at ``points``.

    Divergence-free iff ``sum a_i k_i = 0`` with ``k_i = m_i pi / L_i``.
    """
    x = np.atleast_2d(points)
    k = np.array([m * np.pi / L for m, L in zip(indices, lengths)])
    s = np.sin(k[None, :] * x)
    c = np.cos(k[None, :] * x)
    a = np.asarray(amplitudes, dtype=float)
    return np.stack(
        [
            a[0] * c[:, 0] * s[:, 1] * s[:, 2],
            a[1] * s[:, 0] * c[:, 1] * s[:, 2],
            a[2] * s[:, 0] * s[:, 1] * c[:, 2],
        ],
        axis=1,
    )
