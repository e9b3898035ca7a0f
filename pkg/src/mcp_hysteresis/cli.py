"""Command line: verify-material, run-step, run-cycle, compare-solvers, build-mesh and serve."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from mcp_hysteresis import __version__
from mcp_hysteresis.tools.config import RunConfig, default_config, load_config
from mcp_hysteresis.tools.errors import (
    ConfigError,
    GeometryError,
    HysteresisError,
    MeshValidationError,
    OutsideDomainError,
    ParseError,
)
from mcp_hysteresis.tools.mesh import save_mesh
from mcp_hysteresis.tools.study import compare_solvers, run_cycle_study, run_step, verify_material

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# invalid input rather than a failed computation
_USAGE_ERRORS = (ConfigError, OutsideDomainError, GeometryError, ParseError, MeshValidationError)

_logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration (defaults apply without one)")
    common.add_argument("--output", type=Path, help="output directory, overrides [output] dir")
    common.add_argument("--seed", type=int, help="random seed, overrides the config seed")
    common.add_argument("--strategy", help="solver strategy ssn|lqn|lcm|gcm, replaces the configured list")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for iterations")

    parser = argparse.ArgumentParser(
        prog="mcp-hysteresis",
        description="Vector hysteresis material law and magnetostatic T-joint simulations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify-material", parents=[common], help="randomized checks of the material law")
    verify.add_argument("--jacobian-scale", type=float, default=None, help=argparse.SUPPRESS)
    sub.add_parser("run-step", parents=[common], help="single load step from the virgin state")
    sub.add_parser("run-cycle", parents=[common], help="time-stepped flux cycle")
    sub.add_parser("compare-solvers", parents=[common], help="same problem with several strategies")
    mesh = sub.add_parser("build-mesh", parents=[common], help="write the configured mesh per refinement level")
    mesh.add_argument("--prefix", default="tjoint", help="file name prefix (default: tjoint)")
    sub.add_parser("serve", help="run the MCP server on stdio")
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config is not None else default_config()
    return cfg.with_overrides(output_dir=args.output, seed=args.seed, strategy=args.strategy)


def _cmd_verify_material(cfg: RunConfig, args: argparse.Namespace) -> int:
    report = verify_material(cfg, jacobian_scale=args.jacobian_scale)
    for name, result in report["properties"].items():
        status = "pass" if result["passed"] else "FAIL"
        print(f"{name:20s} {status}  worst margin {result['worst_margin']:.3e}")
    print(f"report written to {Path(cfg.output_dir) / 'material_report.json'}")
    return EXIT_OK if report["passed"] else EXIT_FAILURE


def _print_runs(summary: dict) -> None:
    for run in summary["runs"]:
        print(
            f"level {run['level']} {run['strategy']:3s}: {run['steps']} step(s), "
            f"{run['average_iterations']:.2f} iterations per step, {run['wall_time']:.3f}s"
        )


def _cmd_run_step(cfg: RunConfig, args: argparse.Namespace) -> int:
    summary = run_step(cfg)
    _print_runs(summary)
    return EXIT_OK


def _cmd_run_cycle(cfg: RunConfig, args: argparse.Namespace) -> int:
    summary = run_cycle_study(cfg)
    _print_runs(summary)
    return EXIT_OK


def _cmd_compare_solvers(cfg: RunConfig, args: argparse.Namespace) -> int:
    summary = compare_solvers(cfg)
    for row in summary["comparison"]:
        print(
            f"level {row['level']} {row['strategy']:3s}: {row['iterations']:.2f} iterations, "
            f"relative difference {row['rel_diff']:.2e}"
        )
    if not summary["ordering_holds"]:
        _logger.warning("iteration counts do not follow ssn <= lqn <= lcm <= gcm")
    return EXIT_OK


def _cmd_build_mesh(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for level, mesh in cfg.meshes():
        path = out / f"{args.prefix}_level{level}.mesh"
        save_mesh(mesh, path)
        stats = mesh.stats()
        print(f"{path}: {stats['vertices']} vertices, {stats['triangles']} triangles")
    return EXIT_OK


_COMMANDS = {
    "verify-material": _cmd_verify_material,
    "run-step": _cmd_run_step,
    "run-cycle": _cmd_run_cycle,
    "compare-solvers": _cmd_compare_solvers,
    "build-mesh": _cmd_build_mesh,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line and return the exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.command == "serve":
        from mcp_hysteresis.server import main as serve

        serve()
        return EXIT_OK

    _configure_logging(args.verbose)
    try:
        cfg = _resolve_config(args)
        return _COMMANDS[args.command](cfg, args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HysteresisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
