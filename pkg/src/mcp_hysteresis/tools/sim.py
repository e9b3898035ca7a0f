"""Load programs: single load steps and time-stepped flux cycles with memory commits and probe recording."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from logging import getLogger
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import numpy.typing as npt

from mcp_hysteresis.tools.errors import HysteresisError, OutsideDomainError
from mcp_hysteresis.tools.fem import (
    FieldEvaluation,
    GateLoads,
    P1Space,
    QuadPointState,
    gate_fluxes,
    probe,
)
from mcp_hysteresis.tools.material import MaterialStack
from mcp_hysteresis.tools.mesh import TriMesh
from mcp_hysteresis.tools.solvers import (
    LoadStepProblem,
    SolveReport,
    SolverConfig,
    TangentModel,
    make_tangent,
    run_load_step,
)

_logger = getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

DEFAULT_PROBES: dict[str, tuple[float, float]] = {
    "M1": (-1.2, 0.5),
    "M2": (-0.4, 0.5),
    "M3": (0.0, 0.5),
    "M4": (0.4, 0.5),
    "M5": (0.0, -0.5),
    "M6": (0.0, -1.2),
}

RAMP_END = 0.25  # ramp over the first quarter period


class ProgramKind(str, Enum):
    SINGLE_STEP = "single_step"
    CYCLE = "cycle"


@dataclass(frozen=True)
class LoadProgram:
    """Gate flux schedule.

    A cycle drives Phi_1(t) = a cos(2 pi t + 2 pi/3), Phi_2(t) = a cos(2 pi t)
    at t_n = n / steps_per_unit, n = 1..N, with the factor (1 - cos 4 pi t)/2
    on t <= 0.25 when ``ramp`` is set. Phi_3 = -(Phi_1 + Phi_2) always.
    """

    kind: ProgramKind = ProgramKind.CYCLE
    phi1: float = -0.5
    phi2: float = 1.0
    steps_per_unit: int = 50
    t_end: float = 2.0
    ramp: bool = True
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ProgramKind(self.kind))
        if self.steps_per_unit < 1:
            raise ValueError(f"steps_per_unit must be at least 1, got {self.steps_per_unit}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if not math.isfinite(self.amplitude):
            raise ValueError(f"amplitude must be finite, got {self.amplitude}")

    @property
    def n_steps(self) -> int:
        if self.kind is ProgramKind.SINGLE_STEP:
            return 1
        return max(1, round(self.t_end * self.steps_per_unit))

    def times(self) -> FloatArray:
        if self.kind is ProgramKind.SINGLE_STEP:
            return np.array([0.0])
        return np.arange(1, self.n_steps + 1) / self.steps_per_unit

    def ramp_factor(self, t: float) -> float:
        if not self.ramp or t > RAMP_END:
            return 1.0
        return 0.5 * (1.0 - math.cos(4.0 * math.pi * t))

    def loads_at(self, t: float) -> GateLoads:
        if self.kind is ProgramKind.SINGLE_STEP:
            return GateLoads(self.phi1, self.phi2)
        scale = self.amplitude * self.ramp_factor(t)
        return GateLoads(
            phi1=scale * math.cos(2 * math.pi * t + 2 * math.pi / 3),
            phi2=scale * math.cos(2 * math.pi * t),
        )

    def schedule(self) -> list[tuple[float, GateLoads]]:
        return [(float(t), self.loads_at(float(t))) for t in self.times()]


@dataclass(frozen=True)
class SimulationState:
    """Potential and committed memory after ``t_index`` load steps."""

    psi: FloatArray
    states: QuadPointState
    t_index: int = 0
    evaluation: FieldEvaluation | None = field(default=None, repr=False)


def commit_state(
    sim: SimulationState, evaluation: FieldEvaluation, materials: Sequence[MaterialStack]
) -> SimulationState:
    """Replace every J_{k,p} by the converged J_k of ``evaluation``.

    Raises:
        StateValidationError: If some |J_k| >= Js_k.
    """
    states = sim.states.with_polarizations(evaluation.j)
    states.validate(materials)
    return SimulationState(psi=sim.psi, states=states, t_index=sim.t_index, evaluation=evaluation)


class ProbeSeries:
    """Per probe point the records (t, Hx, Hy, Bx, By) of every committed step."""

    columns = ("t", "Hx", "Hy", "Bx", "By")

    def __init__(self, points: Mapping[str, Sequence[float]]) -> None:
        self.points = {name: (float(p[0]), float(p[1])) for name, p in points.items()}
        self.records: dict[str, list[tuple[float, float, float, float, float]]] = {
            name: [] for name in self.points
        }

    def append(self, name: str, t: float, h: FloatArray, b: FloatArray) -> None:
        self.records[name].append((float(t), float(h[0]), float(h[1]), float(b[0]), float(b[1])))

    def as_array(self, name: str) -> FloatArray:
        return np.array(self.records[name], dtype=float).reshape(-1, 5)

    def __len__(self) -> int:
        return min((len(r) for r in self.records.values()), default=0)


@dataclass(frozen=True)
class EnergyRecord:
    step: int
    t: float
    coenergy: float
    dissipation_increment: float


@dataclass
class CycleResult:
    probes: ProbeSeries
    reports: list[SolveReport] = field(default_factory=list)
    energy: list[EnergyRecord] = field(default_factory=list)
    fluxes: list[dict[str, float]] = field(default_factory=list)
    final_state: SimulationState | None = None

    @property
    def average_iterations(self) -> float:
        return float(np.mean([r.iterations for r in self.reports])) if self.reports else 0.0

    @property
    def total_time(self) -> float:
        return float(sum(r.wall_time for r in self.reports))

    def max_flux_imbalance(self) -> float:
        """Largest |sum_i flux_i| / max_i |flux_i| over all steps (0 for zero flux)."""
        worst = 0.0
        for rec in self.fluxes:
            values = [rec[g] for g in ("gate1", "gate2", "gate3") if g in rec]
            scale = max((abs(v) for v in values), default=0.0)
            if scale > 0:
                worst = max(worst, abs(sum(values)) / scale)
        return worst


def check_probes(mesh: TriMesh, probes: Mapping[str, Sequence[float]]) -> None:
    """Raises OutsideDomainError naming the first probe outside the mesh."""
    for name, point in probes.items():
        if mesh.locate(np.asarray(point, dtype=float)[None])[0] < 0:
            raise OutsideDomainError(f"probe {name!r} at ({point[0]:g}, {point[1]:g}) lies outside the domain")


def run_single_step(
    mesh: TriMesh,
    materials: Sequence[MaterialStack],
    solver_cfg: SolverConfig,
    phi1: float,
    phi2: float,
    *,
    virgin: bool = True,
    state: SimulationState | None = None,
    commit: bool = False,
    space: P1Space | None = None,
) -> tuple[SimulationState, SolveReport]:
    """One converged solve with gate fluxes (phi1, phi2) from psi = 0.

    Args:
        mesh: Triangulation (all triangles use material 0 unless ``state`` says otherwise).
        materials: Material stacks indexed by material id.
        solver_cfg: Strategy and tolerances.
        phi1: Flux through gate 1.
        phi2: Flux through gate 2.
        virgin: Start from zero memory; otherwise ``state`` is required.
        state: Previous simulation state supplying memory.
        commit: Commit the converged polarizations into the returned state.
        space: Prebuilt P1 space for ``mesh``.
    """
    space = space or P1Space.build(mesh)
    if virgin or state is None:
        if not virgin:
            raise ValueError("a previous state is required when virgin is False")
        states = QuadPointState.virgin(mesh, materials)
    else:
        states = state.states
    problem = LoadStepProblem(space, tuple(materials), states, GateLoads(phi1, phi2))
    psi, report, ev = run_load_step(problem, None, solver_cfg)
    result = SimulationState(psi=psi, states=states, t_index=1, evaluation=ev)
    if commit:
        result = commit_state(result, ev, materials)
    return result, report


def run_cycle(
    mesh: TriMesh,
    materials: Sequence[MaterialStack],
    solver_cfg: SolverConfig,
    program: LoadProgram,
    probes: Mapping[str, Sequence[float]] | None = None,
    *,
    space: P1Space | None = None,
    tangent: TangentModel | None = None,
) -> CycleResult:
    """Time-step ``program`` with warm starts, committing memory after every step.

    Probes are recorded after the commit, so they see the committed memory.

    Raises:
        OutsideDomainError: If a probe lies outside the mesh.
        HysteresisError: Solver failures, prefixed with the step index; the
            partial CycleResult is attached as ``partial``.
    """
    probes = dict(DEFAULT_PROBES if probes is None else probes)
    check_probes(mesh, probes)
    space = space or P1Space.build(mesh)
    tangent = tangent or make_tangent(solver_cfg)
    sim = SimulationState(
        psi=np.zeros(space.n_free), states=QuadPointState.virgin(mesh, materials)
    )
    result = CycleResult(probes=ProbeSeries(probes))

    for n, (t, loads) in enumerate(program.schedule(), start=1):
        problem = LoadStepProblem(space, tuple(materials), sim.states, loads)
        try:
            psi, report, ev = run_load_step(problem, sim.psi, solver_cfg, tangent=tangent)
        except HysteresisError as exc:
            wrapped = type(exc)(f"step {n} (t = {t:.6g}): {exc}")
            wrapped.report = getattr(exc, "report", None)  # type: ignore[attr-defined]
            wrapped.partial = result  # type: ignore[attr-defined]
            result.final_state = sim
            raise wrapped from exc
        sim = commit_state(SimulationState(psi=psi, states=sim.states, t_index=n), ev, materials)
        result.reports.append(report)
        result.energy.append(
            EnergyRecord(
                step=n,
                t=t,
                coenergy=float(space.areas @ ev.wstar),
                dissipation_increment=float(space.areas @ ev.dissipation),
            )
        )
        result.fluxes.append(gate_fluxes(space, ev.b))
        for name, point in probes.items():
            h, b = probe(space, materials, sim.states, sim.psi, None, point)
            result.probes.append(name, t, h, b)
        _logger.info(
            "step %d/%d t=%.4f: %d iterations (%s)",
            n,
            program.n_steps,
            t,
            report.iterations,
            solver_cfg.strategy.value,
        )
    result.final_state = sim
    return result


# ---------------------------------------------------------------------------
# Loop diagnostics
# ---------------------------------------------------------------------------


def loop_area(series: npt.ArrayLike, component: int = 0) -> float:
    """Closed-loop integral of H dB for one component of (t, Hx, Hy, Bx, By) records.

    Positive for the counter-clockwise loops of dissipative hysteresis.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 5:
        raise ValueError(f"series must have shape (n, 5), got {arr.shape}")
    if component not in (0, 1):
        raise ValueError(f"component must be 0 or 1, got {component}")
    h = arr[:, 1 + component]
    b = arr[:, 3 + component]
    h_next = np.roll(h, -1)
    b_next = np.roll(b, -1)
    return float(np.sum(0.5 * (h + h_next) * (b_next - b)))


def loop_closure(series: npt.ArrayLike, steps_per_period: int) -> float:
    """Max deviation between the last period and the one before, relative to the loop amplitude.

    H and B are compared separately against their own peak-to-peak range and
    the larger ratio is returned.
    """
    arr = np.asarray(series, dtype=float)
    if len(arr) < 2 * steps_per_period:
        raise ValueError(
            f"need two periods ({2 * steps_per_period} records), got {len(arr)}"
        )
    last = arr[-steps_per_period:]
    prev = arr[-2 * steps_per_period : -steps_per_period]
    worst = 0.0
    for cols in ((1, 2), (3, 4)):
        amplitude = float(np.max(np.ptp(last[:, cols], axis=0)))
        if amplitude == 0:
            continue
        deviation = float(np.max(np.linalg.norm(last[:, cols] - prev[:, cols], axis=1)))
        worst = max(worst, deviation / amplitude)
    return worst


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def write_outputs(result: CycleResult, output_dir: str | Path, *, strategy: str, prefix: str = "") -> list[Path]:
    """Write iterations, probe, energy and flux CSV files; returns the written paths."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def _write(name: str, header: Sequence[str], rows: list[Sequence[object]]) -> None:
        path = out / f"{prefix}{name}"
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
        written.append(path)

    _write(
        "iterations.csv",
        ("step", "strategy", "iterations", "wall_ms", "converged"),
        [
            (n, strategy, r.iterations, f"{1000 * r.wall_time:.3f}", int(r.converged))
            for n, r in enumerate(result.reports, start=1)
        ],
    )
    for name in result.probes.points:
        _write(f"probes_{name}.csv", ProbeSeries.columns, [list(map(repr, rec)) for rec in result.probes.records[name]])
    _write(
        "energy.csv",
        ("step", "coenergy", "dissipation_increment"),
        [(e.step, repr(e.coenergy), repr(e.dissipation_increment)) for e in result.energy],
    )
    _write(
        "fluxes.csv",
        ("step", "gate1", "gate2", "gate3", "balance"),
        [
            (
                n,
                *(repr(rec.get(g, 0.0)) for g in ("gate1", "gate2", "gate3")),
                repr(sum(rec.values())),
            )
            for n, rec in enumerate(result.fluxes, start=1)
        ],
    )
    return written
