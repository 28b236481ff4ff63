"""Command-line entry point.

Usage::

    cavityeig <command> [--config FILE] [--out DIR] [--seed N] [--dry-run] [--threads N]
    cavityeig experiment {continuity,bound,splitting} [...]

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 a checked property did not hold.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import traceback
from importlib import resources
from pathlib import Path

COMMANDS = ("solve", "classify", "grad-check", "optimize", "auchmuty", "experiment")
EXPERIMENTS = ("continuity", "bound", "splitting")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PROPERTY = 0, 1, 2, 3


def _data(name: str) -> dict:
    return json.loads(resources.files("cavityeig").joinpath("data", name).read_text())


def default_config() -> dict:
    return _data("default_config.json")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key not in ("tau", "eps"):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> dict:
    """Parse, validate against the shipped schema and fill defaults."""
    import jsonschema

    from .errors import ConfigError

    if path is None:
        user = default_config()
    else:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        jsonschema.validate(user, _data("config.schema.json"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return _merge(default_config(), user)


# ---------------------------------------------------------------------------
# builders


def build_grid_from(cfg):
    import numpy as np

    from .grid import BoxDomain, build_grid

    g = cfg["grid"]
    cells = g["cells"]
    cells = (cells,) * 3 if isinstance(cells, int) else tuple(cells)
    domain = BoxDomain(tuple(g.get("origin", (0.0, 0.0, 0.0))), tuple(g.get("lengths", (np.pi,) * 3)))
    return build_grid(domain, cells)


def _bounds(b):
    from .permittivity import AdmissibilityBounds

    return AdmissibilityBounds(float(b["alpha"]), float(b["beta"]), float(b["gamma"]))


def build_eps(cfg, grid, seed: int):
    import numpy as np

    from .errors import ConfigError
    from .permittivity import SymMatrixField, random_smooth_field

    e = cfg["eps"]
    kind = e["kind"]
    if kind == "identity":
        return SymMatrixField.identity(grid, e.get("scale", 1.0))
    if kind == "constant":
        if "matrix" not in e:
            raise ConfigError("eps kind 'constant' needs 'matrix'")
        return SymMatrixField.constant(grid, np.array(e["matrix"], dtype=float))
    if kind == "file":
        if "path" not in e:
            raise ConfigError("eps kind 'file' needs 'path'")
        field = SymMatrixField.load(e["path"])
        if field.grid != grid:
            raise ConfigError(f"field in {e['path']} lives on a different grid")
        return field
    if "bounds" not in e:
        raise ConfigError("eps kind 'random' needs 'bounds'")
    return random_smooth_field(grid, _bounds(e["bounds"]), np.random.default_rng(seed), center=e.get("center"))


def resolve_tau(cfg, grid, eps):
    """Returns ``(tau, rho1)``; ``{"window": L}`` selects ``tau = 2 L / rho1``."""
    from .classification import select_tau, solve_dirichlet

    rho1 = solve_dirichlet(grid, eps, 1, tol=cfg["solver"]["tol"])[0].value
    tau = cfg.get("tau", 1.0)
    if isinstance(tau, dict):
        return select_tau(float(tau["window"]), rho1), rho1
    return float(tau), rho1


def _spec(cfg):
    from .spectral import SymmetricFunctionSpec

    return SymmetricFunctionSpec(tuple(cfg["spec"]["F"]), int(cfg["spec"]["s"]))


# ---------------------------------------------------------------------------
# commands


def _tagged(cfg, grid, eps):
    from .assembly import assemble_system
    from .classification import classify, separating_div_tol, solve_dirichlet
    from .eigensolver import solve_penalized

    tau, rho1 = resolve_tau(cfg, grid, eps)
    system = assemble_system(grid, eps, tau)
    spectrum = solve_penalized(system, cfg["count"], method=cfg["solver"]["method"], tol=cfg["solver"]["tol"])
    c = cfg["classify"]
    rho = [p.value for p in solve_dirichlet(grid, eps, c["dirichlet_count"])] if c["dirichlet_count"] else []
    div_tol = separating_div_tol(rho1) if c["div_tol"] == "auto" else float(c["div_tol"])
    tagged = classify(spectrum, system, rho, div_tol=div_tol, match_tol=c["match_tol"])
    return spectrum, tagged


def cmd_solve(cfg, out: Path, seed: int) -> int:
    from .eigensolver import write_spectrum_csv

    grid = build_grid_from(cfg)
    eps = build_eps(cfg, grid, seed)
    spectrum, tagged = _tagged(cfg, grid, eps)
    write_spectrum_csv(spectrum, out / "spectrum.csv", tags=tagged.tags)
    print(f"wrote {out / 'spectrum.csv'} ({len(spectrum)} eigenpairs, tau={spectrum.tau:.6g})")
    return EXIT_OK


def cmd_classify(cfg, out: Path, seed: int) -> int:
    from .classification import write_tagged_csv

    grid = build_grid_from(cfg)
    eps = build_eps(cfg, grid, seed)
    _, tagged = _tagged(cfg, grid, eps)
    write_tagged_csv(tagged, out / "tagged.csv")
    counts = {t: tagged.tags.count(t) for t in ("Maxwell", "Gradient", "Ambiguous")}
    print(f"wrote {out / 'tagged.csv'} {counts}")
    return EXIT_OK


def random_direction(grid, rng, scale: float = 1.0):
    """Smooth Gaussian bump times a random symmetric matrix."""
    import numpy as np

    from .permittivity import SymMatrixField, full_to_sym

    x = grid.node_coords()
    lo = np.asarray(grid.domain.origin)
    L = np.asarray(grid.domain.lengths)
    center = lo + L * rng.uniform(0.2, 0.8, 3)
    width = 0.25 * L.min()
    bump = np.exp(-np.sum(((x - center) / width) ** 2, axis=1))
    a = rng.standard_normal((3, 3))
    return SymMatrixField(grid, scale * bump[:, None] * full_to_sym(0.5 * (a + a.T))[None, :])


def cmd_grad_check(cfg, out: Path, seed: int) -> int:
    import csv

    import numpy as np

    from .errors import PropertyViolation
    from .spectral import fd_check, window_tau

    grid = build_grid_from(cfg)
    eps = build_eps(cfg, grid, seed)
    spec = _spec(cfg)
    gc = cfg["grad_check"]
    tau, rho1 = window_tau(eps, spec.F[-1], cfg["solver"]["tol"])
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(gc["directions"]):
        eta = random_direction(grid, rng)
        reports.append(
            fd_check(
                eps, spec, eta, gc["steps"], tau=tau, rho1=rho1,
                cluster_tol=cfg["spec"]["cluster_tol"], tol=cfg["solver"]["tol"],
            )
        )
    with (out / "grad_check.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["direction", "step", "fd", "analytic", "rel_err"])
        for d, r in enumerate(reports):
            for t, fd, e in zip(r.steps, r.fd, r.rel_errors):
                w.writerow([d, repr(t), repr(fd), repr(r.analytic), f"{e:.6e}"])
    best = min(r.best for r in reports)
    summary = {"tau": tau, "F": list(spec.F), "s": spec.s, "best_rel_err": best, "reports": [r.to_json() for r in reports]}
    (out / "grad_check.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"grad-check: best relative error {best:.3e}")
    worst_best = max(r.best for r in reports)
    if worst_best > gc["max_rel_err"]:
        raise PropertyViolation(f"finite differences disagree: best relative error {worst_best:.3e} > {gc['max_rel_err']}")
    return EXIT_OK


def cmd_optimize(cfg, out: Path, seed: int) -> int:
    from .errors import ClusterError, PropertyViolation
    from .optimizer import OptimizerConfig, optimize, write_trajectory_csv
    from .permittivity import MassConstraint

    grid = build_grid_from(cfg)
    eps = build_eps(cfg, grid, seed)
    o = cfg["optimize"]
    config = OptimizerConfig(
        mode=o["mode"],
        spec=_spec(cfg),
        bounds=_bounds(o["bounds"]),
        mass=MassConstraint(o["mass"]) if o.get("mass") else None,
        step0=o["step0"],
        max_iters=o["max_iters"],
        step_shrink=o["step_shrink"],
        stop_tol=o["stop_tol"],
        tau_policy=o["tau_policy"],
        cluster_tol=cfg["spec"]["cluster_tol"],
        solver_tol=cfg["solver"]["tol"],
    )
    traj = optimize(eps, config)
    if traj.terminal_status == "cluster_error":
        raise ClusterError("the start field splits a cluster of F; the objective is not differentiable there")
    write_trajectory_csv(traj, out / "trajectory.csv")
    traj.final.save(out / "final_eps.json")
    last = traj.iterates[-1] if traj.iterates else None
    print(
        f"optimize: status={traj.terminal_status} iterations={max(len(traj.iterates) - 1, 0)}"
        + (f" value={last.value:.10g} active={last.active_fraction:.3f} kkt={last.kkt:.3f}" if last else "")
    )
    if traj.iterates and traj.interior_kkt_certified:
        raise PropertyViolation("run ended at an interior stationary point (empty active set, small KKT residual)")
    return EXIT_OK


def cmd_auchmuty(cfg, out: Path, seed: int) -> int:
    from .assembly import assemble_system
    from .auchmuty import AuchmutyState, minimize_f, validation_report
    from .eigensolver import solve_penalized
    from .errors import PropertyViolation

    grid = build_grid_from(cfg)
    eps = build_eps(cfg, grid, seed)
    tau, _ = resolve_tau(cfg, grid, eps)
    system = assemble_system(grid, eps, tau)
    a = cfg["auchmuty"]
    Ms = sorted(set(a["M"]))
    spectrum = solve_penalized(system, max(Ms) + 1, method=cfg["solver"]["method"], tol=cfg["solver"]["tol"])
    reports = []
    for M in Ms:
        state = AuchmutyState.from_vectors(system, spectrum.vectors[:, :M])
        result = minimize_f(state, restarts=a["restarts"], seed=seed)
        reports.append(validation_report(state, result, spectrum.values[M]))
    (out / "auchmuty.json").write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
    worst = max(r["gap"] for r in reports)
    print(f"auchmuty: worst relative gap {worst:.3e} over M={Ms}")
    if worst > a["tol"]:
        raise PropertyViolation(f"recovered eigenvalue off by {worst:.3e} > {a['tol']}")
    return EXIT_OK


def cmd_experiment(name, cfg, out: Path, seed: int) -> int:
    import numpy as np

    from . import experiments as ex
    from .errors import PropertyViolation

    grid = build_grid_from(cfg)
    e = cfg["experiment"]
    if name == "continuity":
        c = e["continuity"]
        eps = build_eps(cfg, grid, seed)
        kwargs = {"tol_continuity": c["tol_continuity"]} if "tol_continuity" in c else {}
        result = ex.continuity_experiment(
            eps, c["amplitude"] * np.eye(3), c["k"], c["j_max"], tol=cfg["solver"]["tol"], **kwargs
        )
        ok = result.summary["nonincreasing"] and result.summary["final_below_tol"]
    elif name == "bound":
        c = e["bound"]
        tau = cfg["tau"] if isinstance(cfg["tau"], (int, float)) else 1.0
        samples = ex.random_samples(grid, _bounds(c["bounds"]), c["samples"], seed)
        result = ex.bound_experiment(samples, c["j_max"], tau=float(tau), tol=cfg["solver"]["tol"])
        ok = result.summary["finite"]
    else:
        c = e["splitting"]
        tau = cfg["tau"] if isinstance(cfg["tau"], (int, float)) else 10.0
        result = ex.splitting_refinement_study(
            c["meshes"], float(tau), c["cutoff"], domain=grid.domain, tol=cfg["solver"]["tol"]
        )
        ok = True
    result.write(out)
    print(f"experiment {name}: wrote {out / (result.name + '.csv')}")
    if not ok:
        raise PropertyViolation(f"experiment {name}: postcondition failed ({json.dumps(result.summary, default=float)[:300]})")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cavityeig", description="Penalised Maxwell cavity eigenvalue toolkit")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("name", nargs="?", help="experiment name: " + ", ".join(EXPERIMENTS))
    p.add_argument("--config", help="JSON run configuration (defaults to the shipped example)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dry-run", action="store_true", help="validate and print the resolved plan")
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    return p


def _provenance(exc: BaseException) -> str:
    tb = traceback.extract_tb(exc.__traceback__)
    for frame in reversed(tb):
        if "cavityeig" in frame.filename:
            return Path(frame.filename).stem
    return "cli"


def _set_threads(n):
    if n is None:
        return None
    if n < 1:
        raise ValueError("--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .errors import ConfigError, NumericalError, PropertyViolation

    try:
        if args.command == "experiment" and args.name not in EXPERIMENTS:
            raise ConfigError(f"experiment needs a name from {EXPERIMENTS}, got {args.name!r}")
        if args.command != "experiment" and args.name is not None:
            raise ConfigError(f"unexpected argument {args.name!r}")
        _limits = _set_threads(args.threads)  # noqa: F841 - keeps the limit alive
        cfg = load_config(args.config)
        out = Path(args.out)
        if args.dry_run:
            plan = {"command": args.command, "experiment": args.name, "out": str(out), "seed": args.seed,
                    "threads": args.threads, "config": cfg}
            print(json.dumps(plan, indent=2, sort_keys=True))
            return EXIT_OK
        # resolve the grid early so geometry errors count as configuration errors
        try:
            build_grid_from(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "experiment":
            return cmd_experiment(args.name, cfg, out, args.seed)
        handler = {
            "solve": cmd_solve,
            "classify": cmd_classify,
            "grad-check": cmd_grad_check,
            "optimize": cmd_optimize,
            "auchmuty": cmd_auchmuty,
        }[args.command]
        return handler(cfg, out, args.seed)
    except PropertyViolation as exc:
        print(f"property violation [{_provenance(exc)}]: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except NumericalError as exc:
        print(f"numerical failure [{_provenance(exc)}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"configuration error [{_provenance(exc)}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
