"""MCP server exposing the hysteresis material law and the T-joint field studies."""

from __future__ import annotations

import json
from dataclasses import replace

from mcp.server.fastmcp import FastMCP

from mcp_hysteresis.tools.config import RunConfig, default_config, load_config
from mcp_hysteresis.tools.material import MaterialStack, material_preset
from mcp_hysteresis.tools.mesh import TJointParams, build_tjoint, refine
from mcp_hysteresis.tools.study import (
    compare_solvers,
    material_point,
    run_cycle_study,
    run_step,
    verify_material,
)

mcp = FastMCP(
    "mcp-hysteresis",
    instructions=(
        "Energy-based vector hysteresis: evaluate the pinning-cell material "
        "law at a field point, verify its monotonicity, Lipschitz, KKT and "
        "semi-smoothness properties, and run magnetostatic T-joint "
        "simulations (single load step, flux cycles) with the ssn, lqn, lcm "
        "and gcm solvers. Studies write CSV/JSON files to an output directory."
    ),
)


def _config(
    config_path: str | None,
    output_dir: str | None,
    seed: int | None = None,
    strategy: str | None = None,
) -> RunConfig:
    cfg = load_config(config_path) if config_path else default_config()
    return cfg.with_overrides(output_dir=output_dir, seed=seed, strategy=strategy)


def _stack(preset: str, cells: list[dict] | None) -> MaterialStack:
    if cells is not None:
        return MaterialStack.from_records(cells)
    return material_preset(preset)


# ---------------------------------------------------------------------------
# Tool definitions
# ---------------------------------------------------------------------------


@mcp.tool()
def material_point_tool(
    hx: float,
    hy: float,
    preset: str = "lavet5",
    cells: list[dict] | None = None,
    j_prev: list[list[float]] | None = None,
) -> dict:
    """Evaluate the hysteresis law at one field H = (hx, hy).

    Args:
        hx: Field x component in A/m.
        hy: Field y component in A/m.
        preset: Material preset name (default "lavet5"). Ignored if cells is given.
        cells: Custom cells as {"a_strength", "j_sat", "chi", "energy_prefactor"} dicts.
        j_prev: Previous polarization per cell in T; virgin state when omitted.

    Returns:
        Dict with b, per-cell j, branches (sticking/sliding/smooth), lam,
        co-energy density and the 2x2 Jacobian S_B.
    """
    try:
        return dict(material_point(_stack(preset, cells), (hx, hy), j_prev))
    except ValueError as exc:
        return {"error": str(exc)}


@mcp.tool()
def verify_material_tool(
    config_path: str | None = None,
    output_dir: str | None = None,
    seed: int | None = None,
    samples: int | None = None,
) -> dict:
    """Run the randomized property suite of the configured material stack.

    Args:
        config_path: TOML run configuration. Optional; defaults use lavet5.
        output_dir: Where material_report.json is written. Optional.
        seed: Random seed override. Optional.
        samples: Number of random samples override. Optional.

    Returns:
        Dict with passed flag and per-property results.
    """
    try:
        cfg = _config(config_path, output_dir, seed)
        if samples is not None:
            cfg = replace(cfg, verify=replace(cfg.verify, samples=samples))
        return verify_material(cfg)
    except ValueError as exc:
        return {"error": str(exc)}


@mcp.tool()
def run_step_tool(
    config_path: str | None = None,
    output_dir: str | None = None,
    strategy: str | None = None,
) -> dict:
    """Solve one large load step from the virgin state on every refinement level.

    Args:
        config_path: TOML run configuration. Optional.
        output_dir: Output directory override. Optional.
        strategy: Solver strategy override (ssn, lqn, lcm, gcm). Optional.

    Returns:
        Dict with per-level iteration counts, step sizes and timings.
    """
    try:
        return dict(run_step(_config(config_path, output_dir, strategy=strategy)))
    except ValueError as exc:
        return {"error": str(exc)}


@mcp.tool()
def run_cycle_tool(
    config_path: str | None = None,
    output_dir: str | None = None,
    strategy: str | None = None,
) -> dict:
    """Run the flux load cycle with every configured strategy and level.

    Args:
        config_path: TOML run configuration. Optional.
        output_dir: Output directory override. Optional.
        strategy: Run only this strategy. Optional.

    Returns:
        Dict with average iterations, loop areas and loop closure per run.
    """
    try:
        return dict(run_cycle_study(_config(config_path, output_dir, strategy=strategy)))
    except ValueError as exc:
        return {"error": str(exc)}


@mcp.tool()
def compare_solvers_tool(config_path: str, output_dir: str | None = None) -> dict:
    """Run the configured problem with several strategies and compare solutions.

    Args:
        config_path: TOML run configuration listing at least two strategies.
        output_dir: Output directory override. Optional.

    Returns:
        Dict with the comparison table and the agree flag.
    """
    try:
        return dict(compare_solvers(_config(config_path, output_dir)))
    except ValueError as exc:
        return {"error": str(exc)}


@mcp.tool()
def build_mesh_tool(
    limb_width: float = 1.0,
    yoke_halflength: float = 1.5,
    limb_length: float = 1.5,
    target_h: float = 0.25,
    refinement_levels: int = 0,
) -> dict:
    """Build the T-joint mesh and report its statistics.

    Args:
        limb_width: Width of the vertical limb in m.
        yoke_halflength: Half length of the horizontal yoke in m.
        limb_length: Length of the limb below the yoke in m.
        target_h: Target mesh size in m.
        refinement_levels: Uniform refinements applied after meshing.

    Returns:
        Dict with vertices, triangles, area, h_max and gate lengths.
    """
    try:
        if refinement_levels < 0:
            raise ValueError(f"refinement_levels must be non-negative, got {refinement_levels}")
        params = TJointParams(limb_width, yoke_halflength, limb_length, target_h)
        mesh = refine(build_tjoint(params), refinement_levels)
        mesh.validate()
        return dict(mesh.stats())
    except ValueError as exc:
        return {"error": str(exc)}


# ---------------------------------------------------------------------------
# Resources & prompts
# ---------------------------------------------------------------------------


@mcp.resource("mcp-hysteresis://material-presets")
def material_presets_resource() -> str:
    """Shipped material stacks (cell parameters per preset) as JSON."""
    from mcp_hysteresis.tools.material import preset_table

    return json.dumps(preset_table(), ensure_ascii=False)


@mcp.prompt()
def hysteresis_study(description: str) -> str:
    """Guide a hysteresis simulation study."""
    return (
        f"Carry out this magnetic hysteresis study:\n\n{description}\n\n"
        "1. Check the material with verify_material_tool before any field run.\n"
        "2. Inspect single points with material_point_tool if the response looks odd.\n"
        "3. Use run_step_tool for one large load step or run_cycle_tool for flux cycles.\n"
        "4. Use compare_solvers_tool to cross-check strategies.\n"
        "5. Summarize iterations per step, loop areas and any failures."
    )


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main() -> None:
    """Run the MCP server over stdio."""
    mcp.run(transport="stdio")


if __name__ == "__main__":
    main()
