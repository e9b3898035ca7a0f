"""Run configuration: TOML file with [mesh], [materials], [solver], [program], [probes], [output] and [verify]."""

from __future__ import annotations

import tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from mcp_hysteresis.tools.errors import ConfigError
from mcp_hysteresis.tools.material import MaterialStack, material_preset
from mcp_hysteresis.tools.mesh import TJointParams, TriMesh, build_tjoint, load_mesh, refine
from mcp_hysteresis.tools.sim import DEFAULT_PROBES, LoadProgram
from mcp_hysteresis.tools.solvers import SolverConfig, Strategy

DEFAULT_SEED = 42

_TOP_KEYS = {"seed", "refinement_levels", "mesh", "materials", "solver", "program", "probes", "output", "verify"}
_MESH_KEYS = {"kind", "path", "limb_width", "yoke_halflength", "limb_length", "target_h"}
_MATERIAL_KEYS = {"preset", "cells", "name"}
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)} | {"strategies", "agreement_rel_tol"}
_PROGRAM_KEYS = {f.name for f in fields(LoadProgram)}
_OUTPUT_KEYS = {"dir"}
_VERIFY_KEYS = {"samples", "semismooth_samples", "jacobian_scale", "oracle_tol"}


@dataclass(frozen=True)
class VerifySettings:
    samples: int = 10_000
    semismooth_samples: int = 1000
    jacobian_scale: float = 1.0
    oracle_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError(f"samples must be positive, got {self.samples}")
        if self.semismooth_samples < 0:
            raise ValueError(f"semismooth_samples must be non-negative, got {self.semismooth_samples}")
        if not self.oracle_tol > 0:
            raise ValueError(f"oracle_tol must be positive, got {self.oracle_tol}")


@dataclass(frozen=True)
class RunConfig:
    materials: MaterialStack
    tjoint: TJointParams | None = field(default_factory=TJointParams)
    mesh_file: Path | None = None
    refinement_levels: tuple[int, ...] = (0,)
    solver: SolverConfig = field(default_factory=SolverConfig)
    strategies: tuple[Strategy, ...] = ()
    agreement_rel_tol: float = 1e-6
    program: LoadProgram = field(default_factory=LoadProgram)
    probes: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_PROBES))
    output_dir: Path = Path("output")
    seed: int = DEFAULT_SEED
    verify: VerifySettings = field(default_factory=VerifySettings)

    def __post_init__(self) -> None:
        if not self.refinement_levels:
            raise ConfigError("refinement_levels needs at least one level")
        if any(level < 0 for level in self.refinement_levels):
            raise ConfigError(f"refinement levels must be non-negative, got {list(self.refinement_levels)}")
        if (self.tjoint is None) == (self.mesh_file is None):
            raise ConfigError("exactly one of a built-in T-joint or a mesh file must be configured")
        if not self.agreement_rel_tol > 0:
            raise ConfigError(f"agreement_rel_tol must be positive, got {self.agreement_rel_tol}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    @property
    def run_strategies(self) -> tuple[Strategy, ...]:
        """Strategies of run-cycle / compare-solvers; defaults to the solver strategy."""
        return self.strategies or (self.solver.strategy,)

    def base_mesh(self) -> TriMesh:
        if self.mesh_file is not None:
            return load_mesh(self.mesh_file)
        return build_tjoint(self.tjoint)

    def meshes(self) -> list[tuple[int, TriMesh]]:
        """(level, mesh) for every refinement level, refining incrementally."""
        base = self.base_mesh()
        out = []
        current, done = base, 0
        for level in sorted(set(self.refinement_levels)):
            current = refine(current, level - done)
            done = level
            out.append((level, current))
        return out

    def with_overrides(
        self,
        *,
        output_dir: str | Path | None = None,
        seed: int | None = None,
        strategy: str | None = None,
    ) -> RunConfig:
        """Apply command-line overrides; ``strategy`` replaces the strategy list too."""
        cfg = self
        try:
            if output_dir is not None:
                cfg = replace(cfg, output_dir=Path(output_dir))
            if seed is not None:
                cfg = replace(cfg, seed=seed)
            if strategy is not None:
                chosen = Strategy.from_name(strategy)
                cfg = replace(cfg, solver=replace(cfg.solver, strategy=chosen), strategies=(chosen,))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg


def _check_keys(section: str, data: dict[str, Any], allowed: set[str]) -> None:
    unknown = set(data) - allowed
    if unknown:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _table(data: dict[str, Any], name: str) -> dict[str, Any]:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def _parse_materials(section: dict[str, Any]) -> MaterialStack:
    _check_keys("materials", section, _MATERIAL_KEYS)
    if "preset" in section and "cells" in section:
        raise ConfigError("[materials] takes either 'preset' or 'cells', not both")
    if "cells" in section:
        cells = section["cells"]
        if not isinstance(cells, list):
            raise ConfigError("[materials] cells must be an array of tables")
        return MaterialStack.from_records(cells, name=str(section.get("name", "custom")))
    return material_preset(str(section.get("preset", "lavet5")))


def _parse_mesh(section: dict[str, Any], base_dir: Path) -> tuple[TJointParams | None, Path | None]:
    _check_keys("mesh", section, _MESH_KEYS)
    kind = section.get("kind", "tjoint")
    if kind == "file":
        if "path" not in section:
            raise ConfigError("[mesh] kind = 'file' needs a 'path'")
        extra = set(section) - {"kind", "path"}
        if extra:
            raise ConfigError(f"[mesh] file meshes take no geometry keys: {', '.join(sorted(extra))}")
        path = Path(section["path"])
        return None, path if path.is_absolute() else base_dir / path
    if kind != "tjoint":
        raise ConfigError(f"[mesh] kind must be 'tjoint' or 'file', got {kind!r}")
    if "path" in section:
        raise ConfigError("[mesh] 'path' requires kind = 'file'")
    params = {k: float(v) for k, v in section.items() if k not in ("kind",)}
    return TJointParams(**params), None


def _parse_probes(section: dict[str, Any]) -> dict[str, tuple[float, float]]:
    probes = {}
    for name, point in section.items():
        if not (isinstance(point, list) and len(point) == 2):
            raise ConfigError(f"probe {name!r} must be a two-element array [x, y]")
        probes[name] = (float(point[0]), float(point[1]))
    return probes


def parse_config(data: dict[str, Any], base_dir: Path | None = None) -> RunConfig:
    """Build a RunConfig from an already parsed TOML document.

    Raises:
        ConfigError: Unknown keys, wrong types or invalid values.
    """
    base_dir = base_dir or Path.cwd()
    try:
        _check_keys("", data, _TOP_KEYS)
        tjoint, mesh_file = _parse_mesh(_table(data, "mesh"), base_dir)
        materials = _parse_materials(_table(data, "materials"))

        solver_section = dict(_table(data, "solver"))
        _check_keys("solver", solver_section, _SOLVER_KEYS)
        strategies = tuple(Strategy.from_name(s) for s in solver_section.pop("strategies", []))
        agreement = float(solver_section.pop("agreement_rel_tol", 1e-6))
        solver = SolverConfig(**solver_section)

        program_section = _table(data, "program")
        _check_keys("program", program_section, _PROGRAM_KEYS)
        program = LoadProgram(**program_section)

        probes_section = data.get("probes")
        probes = dict(DEFAULT_PROBES) if probes_section is None else _parse_probes(probes_section)

        output_section = _table(data, "output")
        _check_keys("output", output_section, _OUTPUT_KEYS)
        output_dir = Path(output_section.get("dir", "output"))

        verify_section = _table(data, "verify")
        _check_keys("verify", verify_section, _VERIFY_KEYS)
        verify = VerifySettings(**verify_section)

        levels = data.get("refinement_levels", [0])
        if not isinstance(levels, list) or not all(isinstance(v, int) for v in levels):
            raise ConfigError("refinement_levels must be an array of integers")
        seed = data.get("seed", DEFAULT_SEED)
        if not isinstance(seed, int):
            raise ConfigError(f"seed must be an integer, got {seed!r}")

        return RunConfig(
            materials=materials,
            tjoint=tjoint,
            mesh_file=mesh_file,
            refinement_levels=tuple(levels),
            solver=solver,
            strategies=strategies,
            agreement_rel_tol=agreement,
            program=program,
            probes=probes,
            output_dir=output_dir,
            seed=seed,
            verify=verify,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    """Read a TOML run configuration.

    Raises:
        ConfigError: If the file is missing, not valid TOML, or invalid.
    """
    p = Path(path)
    try:
        with open(p, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return parse_config(data, base_dir=p.resolve().parent)


def default_config() -> RunConfig:
    """Built-in defaults: T-joint, lavet5 material, SSN, two-period cycle."""
    return parse_config({})

