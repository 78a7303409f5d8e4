"""Command-line entry point: ``nstrack <subcommand> [options]``.

Exit codes: 0 when every check passes, 1 when a check fails or a solve
breaks down, 2 on configuration errors.
"""

import argparse
import logging
import sys

import numpy as np

from .config import ExperimentConfig, load_config, parse_levels
from .elements import ElementPair
from .errors import ConfigError, InputError, NSTrackError
from .experiments import (STUDY_LEVELS, run_control_study, run_derivative_checks,
                          run_infsup_diagnostic, run_verify_state, structured_mesh)
from .mesh import write_vtk
from .optimize import ReducedProblem, Scheme, optimize, project_l2_piecewise_constant
from .report import emit_report, render

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
SCHEMES = {"fully": Scheme.FullyDiscrete, "semi": Scheme.Semidiscrete}
PAIRS = {"th": ElementPair.TaylorHood, "mini": ElementPair.Mini}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment configuration")
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--format", choices=("csv", "json"), help="report format")
    common.add_argument("--scheme", choices=tuple(SCHEMES), help="control discretization")
    common.add_argument("--pair", choices=tuple(PAIRS), help="velocity/pressure element pair")
    common.add_argument("--levels", help="comma-separated mesh levels, e.g. 8,16,32")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nstrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify-state", parents=[common],
                   help="manufactured-solution convergence of the state solver")
    sub.add_parser("control-study", parents=[common],
                   help="optimal-control convergence against a fine reference")
    sub.add_parser("derivative-checks", parents=[common],
                   help="finite-difference derivative checks and the adjoint transpose check")
    sub.add_parser("infsup", parents=[common], help="discrete inf-sup constants")
    sub.add_parser("export-vtk", parents=[common],
                   help="optimize on the first level and write a VTK file")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.levels:
        over["levels"] = parse_levels(args.levels)
    if args.format:
        over["format"] = args.format
    if args.out:
        over["out"] = args.out
    if args.scheme:
        over["scheme"] = SCHEMES[args.scheme]
    if args.pair:
        over["pair"] = PAIRS[args.pair]
    return cfg.with_overrides(**over)


def _summarize(checks, stream):
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"[{status}] {c.name}: value={c.value:.6g} threshold={c.threshold:.6g}"
              + (f" ({c.detail})" if c.detail else ""), file=stream)


def _write(obj, cfg, checks=()):
    if cfg.out:
        emit_report(obj, cfg.out, cfg.format, checks)
    else:
        sys.stdout.write(render(obj, cfg.format, checks))


def _export_vtk(cfg):
    level = (cfg.levels or STUDY_LEVELS)[0]
    problem = cfg.problem()
    mesh = structured_mesh(cfg, level)
    rp = ReducedProblem(problem, mesh)
    res = optimize(problem, mesh, tol=cfg.opt_tol, max_iter=cfg.opt_max_iter,
                   strategy=cfg.strategy, reduced=rp)
    space = rp.space
    nv = mesh.num_vertices
    ns = space.scalar_dof_count

    def at_vertices(fn):
        c = fn.coefficients
        return np.column_stack([c[:nv], c[ns:ns + nv]])

    control = res.values if problem.scheme is Scheme.FullyDiscrete \
        else project_l2_piecewise_constant(space, res.values)
    path = cfg.out or "nstrack.vtk"
    write_vtk(path, mesh,
              point_data={"velocity": at_vertices(res.state.y), "pressure": res.state.p.coefficients,
                          "adjoint": at_vertices(res.adjoint.z)},
              cell_data={"control": control})
    print(f"wrote {path}", file=sys.stderr)
    return res.converged


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "verify-state":
            result = run_verify_state(cfg)
            _write(result.table, cfg)
        elif args.command == "control-study":
            result = run_control_study(cfg)
            _write(result.table, cfg)
        elif args.command == "derivative-checks":
            result = run_derivative_checks(
                cfg, schemes=[SCHEMES[args.scheme]] if args.scheme else None,
                pairs=[PAIRS[args.pair]] if args.pair else None)
            _write(None, cfg, result.checks)
        elif args.command == "infsup":
            result = run_infsup_diagnostic(cfg, pairs=[PAIRS[args.pair]] if args.pair else None)
            _write(result.table, cfg)
        else:
            return EXIT_OK if _export_vtk(cfg) else EXIT_FAILED
    except (ConfigError, InputError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NSTrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    _summarize(result.checks, sys.stderr)
    return EXIT_OK if result.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
