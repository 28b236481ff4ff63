"""Experiment drivers: continuity under oscillation, uniform bounds, splitting refinement.

Each driver returns an :class:`ExperimentResult` holding a flat table and a
JSON-ready summary; :meth:`ExperimentResult.write` emits ``<name>.csv`` and
``<name>.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .analytic import dirichlet_eigenvalues, maxwell_eigenvalues
from .assembly import assemble_system
from .classification import div_residual, maxwell_window
from .eigensolver import DEFAULT_TOL, solve_penalized
from .grid import BoxDomain, build_grid
from .permittivity import (
    AdmissibilityBounds,
    SymMatrixField,
    cell_gradient_max,
    oscillatory_sequence,
    random_smooth_field,
)
from .spectral import window_tau

log = logging.getLogger(__name__)


def config_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentResult:
    name: str
    header: list[str]
    rows: list[list] = field(repr=False)
    summary: dict

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{self.name}.csv", out / f"{self.name}.json"
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for row in self.rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        json_path.write_text(json.dumps(self.summary, indent=2, sort_keys=True, default=float) + "\n")
        return csv_path, json_path


def _maxwell_values(eps, tau, rho1, count, tol):
    system = assemble_system(eps.grid, eps, tau)
    spectrum = solve_penalized(system, count + 4, tol=tol)
    vals = np.array([p.value for p in maxwell_window(spectrum, tau, rho1)])
    if vals.size < count:
        raise ValueError(f"only {vals.size} Maxwell values in the window, need {count}")
    return vals[:count]


def continuity_experiment(
    base_eps: SymMatrixField,
    amplitude,
    k_list,
    j_max: int = 6,
    *,
    phase: float = 0.25 * np.pi,
    bounds: AdmissibilityBounds | None = None,
    tol_continuity: float | None = None,
    tol: float = DEFAULT_TOL,
) -> ExperimentResult:
    """Deviation of the first ``j_max`` Maxwell values along an oscillating sequence.

    The sequence is ``eps_k = base + sin(k x1 + phase) / k * amplitude``. The
    penalty weight is selected once at ``base`` and kept for every ``k``.
    Besides eigenvalue deviations the summary reports the sup distance of
    the fields and of their gradients; the latter stays of the order of
    ``|amplitude|`` (up to nodal sampling of the sine), which shows that the sequence does not converge in W^{1,inf}.
    """
    amplitude = np.asarray(amplitude, dtype=float)
    k_list = [int(k) for k in k_list]
    tau, rho1 = window_tau(base_eps, j_max, tol)
    lam0 = _maxwell_values(base_eps, tau, rho1, j_max, tol)
    rows, max_dev, sup_dist, grad_gap = [], [], [], []
    for k in k_list:
        eps_k = oscillatory_sequence(base_eps, k, amplitude, bounds=bounds, phase=phase)
        lam = _maxwell_values(eps_k, tau, rho1, j_max, tol)
        dev = np.abs(lam - lam0)
        for j in range(j_max):
            rows.append([k, j + 1, float(lam[j]), float(dev[j])])
        diff = eps_k - base_eps
        max_dev.append(float(dev.max()))
        sup_dist.append(float(np.abs(diff.values).max()))
        grad_gap.append(float(cell_gradient_max(diff).max()))
    if tol_continuity is None:
        tol_continuity = 10.0 * tol + 1.0 / max(k_list)
    nonincreasing = all(b <= a * (1.0 + 1e-6) + 10.0 * tol for a, b in zip(max_dev, max_dev[1:]))
    lipschitz = max((d / s for d, s in zip(max_dev, sup_dist) if s > 0), default=0.0)
    summary = {
        "tau": tau,
        "rho1": rho1,
        "k": k_list,
        "lambda_base": lam0.tolist(),
        "max_deviation": max_dev,
        "sup_distance": sup_dist,
        "gradient_gap": grad_gap,
        "lipschitz_fit": lipschitz,
        "nonincreasing": nonincreasing,
        "final_below_tol": max_dev[-1] <= tol_continuity,
        "tol_continuity": tol_continuity,
        "fingerprint": config_fingerprint(
            {"base": base_eps.fingerprint(), "amp": amplitude.tolist(), "k": k_list, "j": j_max, "phase": phase}
        ),
    }
    return ExperimentResult("continuity", ["k", "j", "lambda", "deviation"], rows, summary)


def bound_experiment(eps_samples, j_max: int = 10, *, tau: float = 1.0, tol: float = DEFAULT_TOL) -> ExperimentResult:
    """Fit ``C = max sigma_j[eps] / (sigma_j[I] + 1)`` over samples and ``j <= j_max``.

    All samples must share one grid; ``sigma`` are the penalised eigenvalues
    at the fixed weight ``tau``.
    """
    eps_samples = list(eps_samples)
    if not eps_samples:
        raise ValueError("need at least one sample")
    grid = eps_samples[0].grid
    ref_sys = assemble_system(grid, SymMatrixField.identity(grid), tau)
    ref = solve_penalized(ref_sys, j_max, tol=tol).values
    rows, ratios = [], []
    for i, eps in enumerate(eps_samples):
        if eps.grid != grid:
            raise ValueError("samples live on different grids")
        sig = solve_penalized(assemble_system(grid, eps, tau), j_max, tol=tol).values
        r = sig / (ref + 1.0)
        ratios.append(r)
        for j in range(j_max):
            rows.append([i, j + 1, float(sig[j]), float(r[j])])
    ratios = np.array(ratios)
    i, j = np.unravel_index(int(np.argmax(ratios)), ratios.shape)
    summary = {
        "C": float(ratios.max()),
        "argmax_sample": int(i),
        "argmax_j": int(j + 1),
        "samples": len(eps_samples),
        "j_max": j_max,
        "tau": tau,
        "sigma_identity": ref.tolist(),
        "finite": bool(np.isfinite(ratios).all()),
        "fingerprint": config_fingerprint({"samples": [e.fingerprint() for e in eps_samples], "j": j_max, "tau": tau}),
    }
    return ExperimentResult("bound", ["sample", "j", "sigma", "ratio"], rows, summary)


def random_samples(grid, bounds: AdmissibilityBounds, count: int, seed: int = 0):
    """``count`` random admissible fields; the first ``n`` are the same for any ``count >= n``."""
    return [random_smooth_field(grid, bounds, np.random.default_rng([seed, i])) for i in range(count)]


def bound_stability(grid, bounds: AdmissibilityBounds, n: int = 20, *, j_max: int = 10, tau: float = 1.0, seed: int = 0):
    """Constant from ``n`` samples and from ``2n`` nested samples, and their relative change.

    Returns ``(result_2n, C_n, C_2n, relative_change)``; the ``2n`` run
    contains the first ``n`` samples, so ``C_n`` is read off its rows.
    """
    samples = random_samples(grid, bounds, 2 * n, seed)
    large = bound_experiment(samples, j_max, tau=tau)
    c_small = max(r[3] for r in large.rows if r[0] < n)
    c_large = large.summary["C"]
    return large, c_small, c_large, abs(c_large - c_small) / c_small


def splitting_targets(lengths, tau: float, cutoff: float):
    """Merged analytic targets below ``cutoff`` as ``(value, family)`` pairs, ascending."""
    mx = maxwell_eigenvalues(lengths, cutoff)
    dr = tau * dirichlet_eigenvalues(lengths, cutoff / tau)
    out = [(float(v), "Maxwell") for v in mx] + [(float(v), "Gradient") for v in dr if v <= cutoff]
    return sorted(out)


def match_spectra(computed, targets) -> tuple[np.ndarray, np.ndarray]:
    """Assign each target one computed value minimising total relative distance.

    Returns ``(index_into_computed, relative_error)`` per target.
    """
    computed = np.asarray(computed, dtype=float)
    t = np.asarray(targets, dtype=float)
    if computed.size < t.size:
        raise ValueError(f"{computed.size} computed values cannot cover {t.size} targets")
    cost = np.abs(computed[None, :] - t[:, None]) / t[:, None]
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(rows)
    idx = cols[order]
    return idx, cost[rows[order], idx]


def splitting_refinement_study(
    mesh_list,
    tau: float,
    cutoff: float,
    *,
    domain: BoxDomain | None = None,
    eps_scale: float = 1.0,
    extra: int = 6,
    tol: float = DEFAULT_TOL,
) -> ExperimentResult:
    """Compare penalised spectra with the merged Maxwell / scaled Dirichlet targets.

    ``eps = eps_scale * I`` on ``domain`` (default the cube of side pi). The
    targets are the closed-form values divided by ``eps_scale``. Reported per
    mesh: largest relative matched distance, the error of the lowest value,
    and divergence residuals of the matched pairs; orders are
    ``log(e_1 / e_2) / log(h_1 / h_2)`` between successive meshes.
    """
    domain = domain or BoxDomain.cube()
    lengths = domain.lengths
    # M scales like c and D like c^2 at eps = c I, so the spectrum at weight tau
    # is the identity spectrum at weight tau c^2, divided by c
    c = eps_scale
    targets = [(v / c, fam) for v, fam in splitting_targets(lengths, tau * c * c, cutoff * c)]
    tvals = np.array([v for v, _ in targets])
    rows, per_mesh = [], []
    for cells in mesh_list:
        cells = tuple(int(c) for c in np.broadcast_to(cells, 3))
        grid = build_grid(domain, cells)
        eps = SymMatrixField.identity(grid, eps_scale)
        system = assemble_system(grid, eps, tau)
        spectrum = solve_penalized(system, min(len(targets) + extra, system.space.n_free), tol=tol)
        idx, err = match_spectra(spectrum.values, tvals)
        divs = []
        for (tv, fam), i, e in zip(targets, idx, err):
            r = div_residual(spectrum.pairs[i].vector, system)
            divs.append(r)
            rows.append([cells[0], fam, tv, float(spectrum.values[i]), float(e), r])
        divs = np.array(divs)
        fam = np.array([f for _, f in targets])
        per_mesh.append(
            {
                "cells": list(cells),
                "h": float(max(grid.spacing)),
                "max_rel_err": float(err.max()),
                "lowest_rel_err": float(err[0]),
                "max_div_maxwell": float(divs[fam == "Maxwell"].max()) if (fam == "Maxwell").any() else None,
                "min_div_gradient": float(divs[fam == "Gradient"].min()) if (fam == "Gradient").any() else None,
                "method": spectrum.method,
            }
        )
    orders = []
    for a, b in zip(per_mesh, per_mesh[1:]):
        if a["lowest_rel_err"] > 0 and b["lowest_rel_err"] > 0:
            orders.append(float(np.log(a["lowest_rel_err"] / b["lowest_rel_err"]) / np.log(a["h"] / b["h"])))
    summary = {
        "tau": tau,
        "cutoff": cutoff,
        "targets": len(targets),
        "meshes": per_mesh,
        "orders": orders,
        "fingerprint": config_fingerprint(
            {"mesh": [list(np.broadcast_to(m, 3).tolist()) for m in mesh_list], "tau": tau, "cutoff": cutoff,
             "domain": [list(domain.origin), list(domain.lengths)], "eps_scale": eps_scale}
        ),
    }
    header = ["cells", "family", "target", "sigma", "rel_err", "div_residual"]
    return ExperimentResult("splitting", header, rows, summary)
