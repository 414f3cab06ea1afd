"""Command line entry point and run orchestration.

Commands::

    borninfeld solve  CONFIG   run the configured solver, audits and file output
    borninfeld radial CONFIG   tabulate the radial oracle (r, u, u', nu, flux)
    borninfeld verify CONFIG   run the audits on an existing BIFIELD dump
    borninfeld sweep  CONFIG   grid-refinement study written as an error-vs-h table

Exit status: 0 success, 2 configuration error, 3 solver non-convergence,
4 audit failure.
"""

import argparse
from dataclasses import replace
import logging
import os
import sys

import numpy as np

from . import diagnostics as dg
from . import fixed_point as fp
from . import grid as g
from . import io
from . import minimizer as mn
from . import radial_oracle as ro
from .config import emit_config, load_config
from .density import sample_density, sample_density_gradient, to_radial
from .errors import BornInfeldError, ConfigError, DomainError, UnsupportedAuditError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_AUDIT = 4

HARD_KINDS = ("bound", "identity", "fit")

log = logging.getLogger("borninfeld")


def make_grid(cfg):
    return g.Grid(cfg.grid.half_width, cfg.grid.cells, cfg.grid.dimension)


def boundary_data(cfg, grid):
    if cfg.solver.boundary == "zero":
        return np.zeros(grid.shape)
    return g.far_field_dirichlet(cfg.density.total_charge(), grid)


def minimize_options(so):
    return mn.MinimizeOptions(margin=so.margin, max_iterations=so.max_iterations,
                              gradient_tolerance=so.gradient_tolerance,
                              relative_tolerance=so.relative_tolerance, init=so.init,
                              preconditioner=so.preconditioner, memory=so.memory,
                              method=so.descent, cg_maxiter=so.cg_maxiter)


def fixed_point_options(so):
    return fp.FixedPointOptions(tolerance=so.fp_tolerance, max_iterations=so.fp_max_iterations,
                                linear_tolerance=so.linear_tolerance,
                                preconditioner=so.linear_preconditioner)


def tau_policy(so):
    return fp.TauPolicy(theta=so.theta, far_cap=so.far_cap, far_radius=so.far_radius)


def solve(cfg, grid=None):
    """Run the configured grid solver; returns ``(report, stages, rho)``."""
    grid = grid or make_grid(cfg)
    rho = sample_density(cfg.density, grid)
    bd = boundary_data(cfg, grid)
    so = cfg.solver
    stages = None
    if so.method == "minimize":
        rep = mn.minimize(rho, grid, minimize_options(so), bd)
    elif so.method == "fixed_point":
        rep = fp.fixed_point_solve(rho, grid, tau_policy(so), fixed_point_options(so), bd)
    elif so.method == "continuation":
        stages = fp.continuation_solve(rho, grid, so.schedule, bd, so.stage_solver, tau_policy(so),
                                       fixed_point_options(so), minimize_options(so))
        rep = stages[-1].report
        if stages[-1].tau != 1.0:
            rep.converged = False
            rep.message = "continuation stopped at tau = %g: %s" % (stages[-1].tau, rep.message)
    else:
        raise ConfigError("solver method %r has no grid solve; use the radial command" % so.method)
    return rep, stages, rho


def _default_x0(cfg):
    return tuple(cfg.audits.x0) if cfg.audits.x0 is not None else (0.0,) * cfg.grid.dimension


def _failed(name, exc):
    return dg.AuditResult(name, np.nan, np.nan, False, 0.0, "bound", {"error": str(exc)})


def run_audits(cfg, u, rho, grid, stages=None):
    """Evaluate the audits listed in the configuration."""
    au = cfg.audits
    x0 = _default_x0(cfg)
    out = []
    for name in au.names:
        try:
            if name == "spacelike":
                theta = mn.discrete_margin(u, grid)
                out.append(dg.AuditResult("spacelike", 1.0 - theta, 1.0, bool(theta > 0), 0.0, "bound",
                                          {"theta": theta}))
            elif name == "l2_identity":
                out.append(dg.l2_identity_audit(u, rho, grid))
            elif name == "energy_identity":
                out.append(dg.energy_identity_audit(u, rho, grid))
            elif name == "tail_bound":
                out.append(dg.tail_bound_audit(u, rho, grid, au.k, au.p, tol=au.tolerance))
            elif name == "caccioppoli":
                out.append(dg.caccioppoli_audit(u, rho, grid, au.q, x0, (au.cutoff_inner, au.cutoff_outer),
                                                au.tolerance))
            elif name == "sup_nu":
                out.append(dg.sup_nu_report(u, rho, grid, x0, au.radius, au.p, au.sup_nu_baseline))
            elif name == "linearized":
                drho = sample_density_gradient(cfg.density, grid)
                phi = dg.radial_bump(grid, x0, au.bump_radius)
                out.append(dg.linearized_inequality_audit(u, rho, drho, grid, phi, au.tolerance))
            elif name == "decay":
                L = grid.half_width
                lo = au.decay_inner if au.decay_inner is not None else 0.5 * L
                hi = au.decay_outer if au.decay_outer is not None else 0.875 * L
                slope = dg.decay_fit(u, grid, lo, hi)
                target = -(grid.n - 2.0)
                out.append(dg.AuditResult("decay", slope, target,
                                          bool(abs(slope - target) <= au.decay_window * abs(target)),
                                          au.decay_window, "fit", {"annulus": (lo, hi)}))
            elif name == "holder":
                K = dg.holder_estimate(g.gradient(u, grid, "centered"), grid, au.holder_alpha,
                                       au.holder_samples, au.seed)
                out.append(dg.AuditResult("holder[alpha=%g]" % au.holder_alpha, K, np.nan, True, 0.0,
                                          "report", {"alpha": au.holder_alpha}))
            elif name == "stability":
                if not stages or len(stages) < 2:
                    raise UnsupportedAuditError("stability audit needs a continuation run with two or more stages")
                for s1, s2 in zip(stages[:-1], stages[1:]):
                    out.append(fp.stability_audit(s1, s2, rho, grid))
        except (UnsupportedAuditError, DomainError) as exc:
            log.error("audit %s could not run: %s", name, exc)
            out.append(_failed(name, exc))
    return out


def hard_failures(audits):
    return [a for a in audits
            if (a.kind in HARD_KINDS or (a.kind == "regression" and a.metadata.get("baseline") is not None))
            and not a.passed]


def _summary(rep, cfg, command):
    return {
        "command": command,
        "method": rep.solver,
        "converged": rep.converged,
        "message": rep.message,
        "iterations": rep.iterations,
        "energy": rep.energy,
        "residual_norm": rep.residual_norm,
        "tolerance": rep.tolerance if rep.tolerance is not None else np.nan,
        "theta": rep.theta,
        "sup_bound": rep.sup_bound,
        "holder_bound": rep.holder_bound if rep.holder_bound is not None else np.nan,
        "total_charge": cfg.density.total_charge(),
    }


def _grid_info(grid):
    return {"dimension": grid.n, "cells": grid.cells, "half_width": grid.half_width, "h": grid.h}


def _outdir(cfg):
    d = cfg.output.directory
    os.makedirs(d, exist_ok=True)
    return d


def _write_outputs(cfg, rep, grid, audits, command, stages=None):
    d = _outdir(cfg)
    sections = [("run", _summary(rep, cfg, command)), ("grid", _grid_info(grid))]
    if "nondivergence_residual" in rep.extra:
        sections.append(("fixed_point", {
            "divergence_residual": rep.extra["divergence_residual"],
            "nondivergence_residual": rep.extra["nondivergence_residual"],
            "tau_min": min(rep.extra.get("tau_history") or [1.0]),
        }))
    if stages:
        sections.append(("continuation", {"stages": tuple(s.tau for s in stages),
                                          "converged": tuple(s.report.converged for s in stages)}))
    sections.append(("audits", dg.audit_table(audits) if audits else "none\n"))
    sections.append(("config", emit_config(cfg)))
    io.write_report(os.path.join(d, "report.txt"), sections)
    with open(os.path.join(d, "audits.csv"), "w", encoding="utf-8") as fh:
        fh.write(dg.audit_csv(audits))
    if cfg.output.field:
        io.dump_field(os.path.join(d, "field.bifield"), rep.u, grid)
    if cfg.output.slices:
        io.write_slices(os.path.join(d, "slices.csv"), rep.u, grid)
    log_lines = rep.extra.get("log")
    if log_lines:
        with open(os.path.join(d, "iterations.log"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + "\n")


def _status(rep, audits):
    if not rep.converged:
        return EXIT_NONCONVERGED
    return EXIT_AUDIT if hard_failures(audits) else EXIT_OK


def cmd_solve(cfg):
    if cfg.solver.method == "radial":
        return cmd_radial(cfg)
    grid = make_grid(cfg)
    rep, stages, rho = solve(cfg, grid)
    audits = run_audits(cfg, rep.u, rho, grid, stages)
    rep.audits = audits
    for a in audits:
        if a.name.startswith("holder"):
            rep.holder_bound = a.lhs
    _write_outputs(cfg, rep, grid, audits, "solve", stages)
    log.info("%s: %s after %d iterations", rep.solver, rep.message, rep.iterations)
    return _status(rep, audits)


def radial_solution(cfg):
    rho = to_radial(cfg.density)
    return ro.RadialSolution(rho, cfg.grid.dimension, r_table=cfg.solver.radial_max)


def cmd_radial(cfg):
    try:
        sol = radial_solution(cfg)
    except DomainError as exc:
        raise ConfigError("radial oracle: %s" % exc) from None
    so = cfg.solver
    r = np.linspace(so.radial_max / (so.radial_points - 1), so.radial_max, so.radial_points - 1)
    d = _outdir(cfg)
    io.write_csv(os.path.join(d, "radial.csv"), ["r", "u", "du", "nu", "flux"], ro.table(sol, r))
    io.write_report(os.path.join(d, "report.txt"), [
        ("run", {"command": "radial", "n": sol.n, "total_charge": sol.total_charge,
                 "a_eff": sol.a_eff, "u_at_zero": float(sol.value(np.array([0.0]))[0])}),
        ("config", emit_config(cfg))])
    return EXIT_OK


def cmd_verify(cfg):
    if cfg.output.field_input is None:
        raise ConfigError("verify needs [output] field_input pointing at a BIFIELD dump")
    u, grid = io.load_field(cfg.output.field_input)
    if grid.n != cfg.grid.dimension:
        raise ConfigError("dump dimension %d differs from [grid] dimension %d" % (grid.n, cfg.grid.dimension))
    rho = sample_density(cfg.density, grid)
    audits = run_audits(cfg, u, rho, grid)
    try:
        res = mn.l2(mn.energy_gradient(u, rho, grid), grid)
    except DomainError:
        res = np.inf
    rep = mn.SolveReport(u=u, theta=mn.discrete_margin(u, grid), energy=mn.discrete_energy(u, rho, grid),
                         residual_norm=res, iterations=0, converged=True, solver="verify", grid=grid,
                         message="loaded %s" % cfg.output.field_input,
                         sup_bound=float(np.abs(u).max()), audits=audits)
    _write_outputs(replace(cfg, output=replace(cfg.output, field=False)), rep, grid, audits, "verify")
    return EXIT_AUDIT if hard_failures(audits) else EXIT_OK


def sweep_errors(cfg):
    """Rows ``(cells, h, error, ratio, iterations, converged)`` of the refinement study.

    The error is the relative sup-norm difference on ``r_inner <= |x| <= r_outer``
    against the radial oracle, or against the finest grid at shared nodes.
    """
    sw = cfg.sweep
    cells = sorted(sw.cells)
    results = []
    for m in cells:
        c = replace(cfg, grid=replace(cfg.grid, cells=m))
        grid = make_grid(c)
        rep, _, _ = solve(c, grid)
        results.append((m, grid, rep))
    rows = []
    if sw.reference == "radial":
        sol = radial_solution(cfg)
        errs = [annulus_error(rep.u, grid, sol.value, sw.r_inner, sw.r_outer) for _, grid, rep in results]
    else:
        _, fgrid, frep = results[-1]
        errs = [nested_error(rep.u, grid, frep.u, fgrid, sw.r_inner, sw.r_outer) for _, grid, rep in results[:-1]]
        errs.append(np.nan)
    for i, ((m, grid, rep), e) in enumerate(zip(results, errs)):
        ratio = errs[i - 1] / e if i > 0 and e > 0 else np.nan
        rows.append((m, grid.h, e, ratio, rep.iterations, rep.converged))
    return rows


def annulus_error(u, grid, exact, r_inner, r_outer, center=None):
    """Relative sup-norm error ``max |u - exact| / max |exact|`` on the annulus."""
    r = grid.radius(center)
    sel = (r >= r_inner) & (r <= r_outer)
    if not sel.any():
        raise DomainError("annulus contains no nodes")
    rs, inv = np.unique(r[sel], return_inverse=True)
    ex = np.asarray(exact(rs))[inv]
    return float(np.abs(u[sel] - ex).max() / np.abs(ex).max())


def nested_error(u, grid, uf, fgrid, r_inner, r_outer):
    if fgrid.cells % grid.cells or fgrid.half_width != grid.half_width:
        raise ConfigError("reference = finest needs grid sizes that divide the finest one")
    k = fgrid.cells // grid.cells
    sub = uf[(slice(None, None, k),) * grid.n]
    r = grid.radius()
    sel = (r >= r_inner) & (r <= r_outer)
    return float(np.abs(u[sel] - sub[sel]).max() / np.abs(sub[sel]).max())


def cmd_sweep(cfg):
    rows = sweep_errors(cfg)
    d = _outdir(cfg)
    io.write_csv(os.path.join(d, "sweep.csv"), ["cells", "h", "error", "ratio", "iterations", "converged"], rows)
    io.write_report(os.path.join(d, "report.txt"), [
        ("run", {"command": "sweep", "reference": cfg.sweep.reference,
                 "annulus": (cfg.sweep.r_inner, cfg.sweep.r_outer)}),
        ("sweep", "\n".join("cells = %d  h = %.6g  error = %.6e  ratio = %.4g" % r[:4] for r in rows)),
        ("config", emit_config(cfg))])
    return EXIT_OK if all(r[5] for r in rows) else EXIT_NONCONVERGED


COMMANDS = {"solve": cmd_solve, "radial": cmd_radial, "verify": cmd_verify, "sweep": cmd_sweep}


def run(cfg, command="solve"):
    """Execute ``command`` for a parsed configuration and return the exit status."""
    if command not in COMMANDS:
        raise ConfigError("unknown command %r (valid: %s)" % (command, ", ".join(COMMANDS)))
    return COMMANDS[command](cfg)


def build_parser():
    p = argparse.ArgumentParser(prog="borninfeld", description="Born-Infeld electrostatics solver and audits")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", help="configuration file")
    p.add_argument("-o", "--output", help="output directory (overrides [output] directory)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="repeat for more detail")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a configuration value")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)
    overrides = list(args.set)
    if args.output:
        overrides.append("output.directory=%s" % os.path.abspath(args.output))
    try:
        cfg = load_config(args.config, overrides)
        return run(cfg, args.command)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except BornInfeldError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
