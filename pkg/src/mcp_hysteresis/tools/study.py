"""Studies behind the CLI and the MCP tools: material verification, single step, load cycle and solver comparison."""

from __future__ import annotations

import csv
import json
from dataclasses import replace
from logging import getLogger
from pathlib import Path
from typing import Any, Sequence, TypedDict

import numpy as np

from mcp_hysteresis.tools.config import RunConfig
from mcp_hysteresis.tools.errors import ConfigError, HysteresisError, SolutionMismatchError
from mcp_hysteresis.tools.fem import P1Space, energy_norm
from mcp_hysteresis.tools.material import (
    MaterialStack,
    StackState,
    coenergy_density,
    generalized_jacobian,
    update_stack,
)
from mcp_hysteresis.tools.sim import (
    CycleResult,
    LoadProgram,
    ProgramKind,
    check_probes,
    loop_area,
    loop_closure,
    run_cycle,
    write_outputs,
)
from mcp_hysteresis.tools.solvers import Strategy
from mcp_hysteresis.tools.verify import run_property_suite

_logger = getLogger(__name__)


class LevelSummary(TypedDict, total=False):
    level: int
    strategy: str
    vertices: int
    triangles: int
    dofs: int
    steps: int
    iterations: int
    average_iterations: float
    wall_time: float
    converged: bool
    final_merit: float
    flux_imbalance: float
    step_sizes: list[float]
    direction_norms: list[float]
    loop_areas: dict[str, float]
    loop_closure: dict[str, float]
    error: str


class StudySummary(TypedDict, total=False):
    command: str
    material: str
    seed: int
    program: dict[str, Any]
    runs: list[LevelSummary]
    output_dir: str
    failed: bool
    error: str


class CompareRow(TypedDict):
    strategy: str
    level: int
    iterations: float
    wall_time: float
    final_merit: float
    rel_diff: float


class CompareSummary(StudySummary, total=False):
    agreement_rel_tol: float
    agree: bool
    ordering_holds: bool
    comparison: list[CompareRow]


def write_json(data: dict[str, Any], path: Path) -> None:
    """Write ``data`` with sorted keys so identical runs give identical files."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _program_dict(program: LoadProgram) -> dict[str, Any]:
    return {
        "kind": program.kind.value,
        "phi1": program.phi1,
        "phi2": program.phi2,
        "steps_per_unit": program.steps_per_unit,
        "t_end": program.t_end,
        "ramp": program.ramp,
        "amplitude": program.amplitude,
        "n_steps": program.n_steps,
    }


def verify_material(cfg: RunConfig, *, jacobian_scale: float | None = None) -> dict[str, Any]:
    """Run the material property suite and write ``material_report.json``."""
    settings = cfg.verify
    report = run_property_suite(
        cfg.materials,
        settings.samples,
        cfg.seed,
        jacobian_scale=settings.jacobian_scale if jacobian_scale is None else jacobian_scale,
        semismooth_samples=settings.semismooth_samples,
        oracle_tol=settings.oracle_tol,
    )
    data = report.to_dict()
    write_json(data, Path(cfg.output_dir) / "material_report.json")
    return data


def _level_summary(
    level: int, strategy: Strategy, space: P1Space, result: CycleResult, program: LoadProgram
) -> LevelSummary:
    mesh = space.mesh
    summary: LevelSummary = {
        "level": level,
        "strategy": strategy.value,
        "vertices": mesh.n_vertices,
        "triangles": mesh.n_triangles,
        "dofs": space.n_free,
        "steps": len(result.reports),
        "iterations": int(sum(r.iterations for r in result.reports)),
        "average_iterations": result.average_iterations,
        "wall_time": result.total_time,
        "converged": all(r.converged for r in result.reports),
        "final_merit": result.reports[-1].final_merit if result.reports else 0.0,
        "flux_imbalance": result.max_flux_imbalance(),
    }
    if program.kind is ProgramKind.SINGLE_STEP and result.reports:
        summary["step_sizes"] = list(result.reports[0].step_sizes)
        summary["direction_norms"] = list(result.reports[0].direction_norms)
    if program.kind is ProgramKind.CYCLE:
        per_period = program.steps_per_unit
        areas, closure = {}, {}
        for name in result.probes.points:
            series = result.probes.as_array(name)
            if len(series) >= per_period:
                areas[name] = loop_area(series[-per_period:], component=0)
            if len(series) >= 2 * per_period:
                closure[name] = loop_closure(series, per_period)
        summary["loop_areas"] = areas
        summary["loop_closure"] = closure
    return summary


def _run_program(
    cfg: RunConfig, program: LoadProgram, strategies: tuple[Strategy, ...], command: str
) -> tuple[StudySummary, dict[tuple[int, Strategy], tuple[P1Space, CycleResult]]]:
    out_dir = Path(cfg.output_dir)
    summary: StudySummary = {
        "command": command,
        "material": cfg.materials.name,
        "seed": cfg.seed,
        "program": _program_dict(program),
        "runs": [],
        "output_dir": str(out_dir),
        "failed": False,
    }
    results: dict[tuple[int, Strategy], tuple[P1Space, CycleResult]] = {}
    meshes = cfg.meshes()
    # refinement keeps the domain, so checking the coarsest mesh suffices
    check_probes(meshes[0][1], cfg.probes)
    for level, mesh in meshes:
        space = P1Space.build(mesh)
        for strategy in strategies:
            solver = replace(cfg.solver, strategy=strategy)
            run_dir = out_dir / f"level{level}" / strategy.value
            try:
                result = run_cycle(mesh, [cfg.materials], solver, program, cfg.probes, space=space)
            except HysteresisError as exc:
                partial = getattr(exc, "partial", None)
                if partial is not None:
                    write_outputs(partial, run_dir, strategy=strategy.value)
                summary["runs"].append({"level": level, "strategy": strategy.value, "error": str(exc)})
                summary["failed"] = True
                summary["error"] = str(exc)
                write_json(dict(summary), out_dir / "summary.json")
                raise
            write_outputs(result, run_dir, strategy=strategy.value)
            summary["runs"].append(_level_summary(level, strategy, space, result, program))
            results[(level, strategy)] = (space, result)
            _logger.info(
                "level %d %s: %.2f iterations per step", level, strategy.value, result.average_iterations
            )
    write_json(dict(summary), out_dir / "summary.json")
    return summary, results


def run_step(cfg: RunConfig) -> StudySummary:
    """Single large load step from the virgin state on every refinement level."""
    program = replace(cfg.program, kind=ProgramKind.SINGLE_STEP)
    summary, _ = _run_program(cfg, program, (cfg.solver.strategy,), "run-step")
    return summary


def run_cycle_study(cfg: RunConfig) -> StudySummary:
    """Load cycle for every configured strategy and refinement level."""
    program = replace(cfg.program, kind=ProgramKind.CYCLE)
    summary, _ = _run_program(cfg, program, cfg.run_strategies, "run-cycle")
    return summary


def compare_solvers(cfg: RunConfig) -> CompareSummary:
    """Run the configured program with every strategy and compare the final potentials.

    Raises:
        ConfigError: If fewer than two strategies are configured.
        SolutionMismatchError: If a final potential differs from the first
            strategy's by more than ``agreement_rel_tol`` in the energy norm.
    """
    strategies = cfg.run_strategies
    if len(set(strategies)) < 2:
        raise ConfigError("compare-solvers needs at least two different strategies")
    summary, results = _run_program(cfg, cfg.program, strategies, "compare-solvers")
    rows: list[CompareRow] = []
    worst = 0.0
    for level in sorted({lvl for lvl, _ in results}):
        ref_space, ref_result = results[(level, strategies[0])]
        assert ref_result.final_state is not None
        ref_psi = ref_result.final_state.psi
        ref_norm = energy_norm(ref_space, ref_psi)
        for strategy in strategies:
            space, result = results[(level, strategy)]
            assert result.final_state is not None
            diff = energy_norm(space, result.final_state.psi - ref_psi)
            rel = diff / ref_norm if ref_norm > 0 else diff
            worst = max(worst, rel)
            rows.append(
                {
                    "strategy": strategy.value,
                    "level": level,
                    "iterations": result.average_iterations,
                    "wall_time": result.total_time,
                    "final_merit": result.reports[-1].final_merit if result.reports else 0.0,
                    "rel_diff": float(rel),
                }
            )
    out_dir = Path(cfg.output_dir)
    with open(out_dir / "compare.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(CompareRow.__annotations__))
        writer.writeheader()
        writer.writerows(rows)
    agree = bool(worst <= cfg.agreement_rel_tol)
    compare: CompareSummary = {
        **summary,
        "agreement_rel_tol": cfg.agreement_rel_tol,
        "agree": agree,
        "ordering_holds": ordering_holds(rows),
        "comparison": rows,
    }
    write_json(dict(compare), out_dir / "summary.json")
    if not agree:
        raise SolutionMismatchError(
            f"final potentials disagree: worst relative difference {worst:.3e} "
            f"> {cfg.agreement_rel_tol:.1e}"
        )
    return compare


def ordering_holds(rows: list[CompareRow]) -> bool:
    """True if average iterations satisfy SSN <= LQN <= LCM <= GCM on every level present."""
    order = [s.value for s in Strategy]
    by_level: dict[int, dict[str, float]] = {}
    for row in rows:
        by_level.setdefault(row["level"], {})[row["strategy"]] = row["iterations"]
    for counts in by_level.values():
        seq = [counts[s] for s in order if s in counts]
        if any(a > b for a, b in zip(seq, seq[1:])):
            return False
    return True


class MaterialPointResult(TypedDict):
    material: str
    h: list[float]
    b: list[float]
    j: list[list[float]]
    branches: list[str]
    lam: list[float]
    coenergy: float
    jacobian: list[list[float]]


def material_point(
    stack: MaterialStack, h: Sequence[float], j_prev: Sequence[Sequence[float]] | None = None
) -> MaterialPointResult:
    """B, the partial polarizations, branches, w* and S_B of one stack at a single H.

    Args:
        stack: Material stack.
        h: Field (Hx, Hy) in A/m.
        j_prev: Previous polarizations, one pair per cell; virgin when omitted.
    """
    state = StackState.virgin(stack) if j_prev is None else StackState(np.asarray(j_prev, dtype=float))
    h_arr = np.asarray(h, dtype=float)
    if h_arr.shape != (2,):
        raise ValueError(f"h must have two components, got shape {h_arr.shape}")
    results, b = update_stack(stack, h_arr, state)
    return {
        "material": stack.name,
        "h": h_arr.tolist(),
        "b": b.tolist(),
        "j": [r.j_new.tolist() for r in results],
        "branches": [r.branch.name.lower() for r in results],
        "lam": [r.lam for r in results],
        "coenergy": coenergy_density(stack, h_arr, state),
        "jacobian": generalized_jacobian(stack, h_arr, state, results).tolist(),
    }
