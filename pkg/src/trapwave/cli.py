"""Command line front-end.

    trapwave <command> --config run.toml [--jobs N] [--out DIR] [--dump-matrices]

Commands: modes, scatter, sweep, trap, conduct, potential.  Exit status is 0 on
success (warnings allowed), 1 for configuration errors and 2 for numerical
failures.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import scenarios as sc
from .errors import ConfigError, GeometryError, TrapwaveError
from .geometry import truncate
from .output import atomic_dump, write_csv, write_field, write_json, write_sweep
from .scattering import (
    Problem,
    conductance,
    find_trapped,
    reconstruct_trapped_field,
    refine_peak,
    sweep,
)
from .solver import assemble

log = logging.getLogger("trapwave")

COMMANDS = ("modes", "scatter", "sweep", "trap", "conduct", "potential")


class NumericalFailure(Exception):
    pass


def build_problem(cfg: cfgmod.RunConfig) -> Problem:
    num = cfg.numeric
    geom = cfg.scenario.build(num.h)
    domain = truncate(geom, geom.R0 + num.R)
    return Problem(domain, num.h, equation=cfg.equation, gamma=num.gamma,
                   zeta=None if num.zeta == "auto" else num.zeta, eps_thr=num.eps_thr,
                   cond_max=num.cond_max, tol_S=num.tol_S)


def _single_x(cfg):
    if cfg.run.x is not None:
        return cfg.run.x
    if cfg.run.grid:
        return cfg.run.grid[0]
    raise ConfigError("run.x: a frequency (k or E) is required for this command")


def _point_summary(res):
    return {
        "x": res.x,
        "omega": res.omega,
        "N": res.N,
        "M": res.M,
        "threshold": res.threshold,
        "sigma_min": res.sigma_min,
        "unitarity_defect": res.S.defect if res.S is not None else None,
        "cond_incoming": res.S.cond if res.S is not None else None,
        "residual_eigenvalues": res.residuals,
        "warnings": list(res.warnings),
        "error": res.error or None,
    }


def _dump_matrices(problem, x, out):
    op = assemble(problem.mesh, problem.make_equation(x), problem.zeta_for(x), problem.alpha_for(x),
                  problem.prepared, problem.dirichlet_tags)
    atomic_dump(out / "mesh.txt", problem.mesh.export_text)
    atomic_dump(out / "matrix.txt", op.dump)


# -- commands -----------------------------------------------------------------

def cmd_modes(cfg, problem, out, args):
    x = _single_x(cfg)
    sel = problem.select(x)
    rows = [(c, n, mu, lr, li, kind) for c, n, mu, lr, li, kind in sel.table()]
    write_csv(out / "modes.csv", ["channel", "n", "mu", "re_lambda", "im_lambda", "kind"], rows,
              [f"modes at x = {x:.12g} (omega = {problem.omega(x):.12g}), N = {sel.N}, M = {sel.M}"])
    return {"x": x, "N": sel.N, "M": sel.M, "threshold": sel.has_threshold}, []


def cmd_scatter(cfg, problem, out, args):
    x = _single_x(cfg)
    res = problem.solve(x, keep=True)
    if res.error:
        raise NumericalFailure(res.error)
    S = res.S.S
    rows = [(m, n, S[m, n].real, S[m, n].imag, abs(S[m, n])) for m in range(S.shape[0]) for n in range(S.shape[1])]
    write_csv(out / "S.csv", ["row", "col", "re", "im", "abs"], rows,
              [f"scattering matrix at x = {x:.12g}; labels (channel, n): {list(res.S.labels)}"])
    if res.N > cfg.run.inlet:
        write_field(out / "field.csv", problem.scattering_field(res, cfg.run.inlet),
                    [f"total field for unit incidence in mode {cfg.run.inlet} at x = {x:.12g}"])
    summary = _point_summary(res)
    summary["labels"] = list(res.S.labels)
    return summary, list(res.warnings)


def _run_sweep(cfg, problem, args):
    xs = cfg.run.xs()
    result = sweep(problem, xs, jobs=args.jobs)
    if not any(p.ok for p in result.points):
        raise NumericalFailure("every sweep point failed: " + result.points[0].error)
    warnings = [f"x = {p.x:.12g}: {w}" for p in result.points for w in p.warnings]
    warnings += [f"x = {p.x:.12g}: {p.error}" for p in result.points if p.error]
    return result, warnings


def cmd_sweep(cfg, problem, out, args):
    result, warnings = _run_sweep(cfg, problem, args)
    write_sweep(out / "sweep.csv", result, [f"{cfg.scenario.name} sweep, {len(result.xs)} points"])
    return {"points": [_point_summary(p) for p in result.points]}, warnings


def cmd_trap(cfg, problem, out, args):
    result, warnings = _run_sweep(cfg, problem, args)
    write_sweep(out / "sweep.csv", result, [f"{cfg.scenario.name} trapped-mode sweep"])
    tol = None if cfg.numeric.tol_trap == "auto" else cfg.numeric.tol_trap
    roots = find_trapped(problem, result, tol_trap=tol)
    found = []
    for i, (x, s) in enumerate(roots):
        entry = {"x": x, "sigma_min": s}
        res = problem.solve(x, keep=True)
        try:
            fld = reconstruct_trapped_field(problem, res)
            write_field(out / f"trapped_{i}.csv", fld, [f"trapped mode at x = {x:.12g}, sigma_min = {s:.3e}"])
            entry["field"] = f"trapped_{i}.csv"
        except TrapwaveError as exc:
            entry["field_error"] = f"{type(exc).__name__}: {exc}"
            warnings.append(entry["field_error"])
        found.append(entry)
    summary = {"tol_trap": result.tol_trap() if tol is None else tol, "roots": found}
    if not found:
        summary["note"] = "no σ_min dip found"
    return summary, warnings


def cmd_conduct(cfg, problem, out, args):
    result, warnings = _run_sweep(cfg, problem, args)
    G = result.conductance(cfg.run.inlet, cfg.run.outlet)
    write_csv(out / "conductance.csv", ["x", "G"], zip(result.xs, G),
              [f"normalized conductance from mode {cfg.run.inlet} into channel {cfg.run.outlet}"])
    summary = {"inlet": cfg.run.inlet, "outlet": cfg.run.outlet}
    if np.isfinite(G).any():
        i = int(np.nanargmax(G))
        summary["grid_peak"] = {"x": result.xs[i], "G": G[i]}
        if 0 < i < len(G) - 1:
            def f(x):
                r = problem.solve(x)
                return conductance(r.S, cfg.run.inlet, cfg.run.outlet) if r.S is not None and r.N > cfg.run.inlet else -np.inf
            try:
                xp, gp = refine_peak(f, (result.xs[i - 1], result.xs[i], result.xs[i + 1]))
                summary["peak"] = {"x": xp, "G": gp}
            except TrapwaveError as exc:
                warnings.append(f"peak refinement: {exc}")
    return summary, warnings


def cmd_potential(cfg, problem, out, args):
    if cfg.scenario.name != "trigger":
        raise ConfigError("potential: only defined for scenario 'trigger'")
    p = cfg.scenario.dataclass_params()
    fld = sc.handling_potential(p, cfg.numeric.h)
    write_field(out / "potential.csv", fld, [f"handling potential, V = {list(p.V)}"])
    v = fld.values.real
    return {"min": v.min(), "max": v.max(), "nodes": len(v)}, []


HANDLERS = {
    "modes": cmd_modes,
    "scatter": cmd_scatter,
    "sweep": cmd_sweep,
    "trap": cmd_trap,
    "conduct": cmd_conduct,
    "potential": cmd_potential,
}


def parser():
    ap = argparse.ArgumentParser(prog="trapwave", description="Scattering matrices and trapped modes of planar waveguides.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="TOML (or JSON) run configuration")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel sweep workers")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--dump-matrices", action="store_true", help="also write the mesh and the system matrix")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = cfgmod.load(args.config)
        problem = None if args.command == "potential" else build_problem(cfg)
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TrapwaveError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    try:
        summary, warnings = HANDLERS[args.command](cfg, problem, out, args)
        if args.dump_matrices and problem is not None:
            _dump_matrices(problem, _single_x(cfg), out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (TrapwaveError, NumericalFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    write_json(out / "summary.json", {
        "command": args.command,
        "version": __version__,
        "config": cfg.resolved(),
        "result": summary,
        "warnings": warnings,
    })
    for w in warnings:
        log.warning(w)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
