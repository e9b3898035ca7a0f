"""Tests for load programs, cycles, loop diagnostics and CSV outputs."""

import csv
import math

import numpy as np
import pytest

from mcp_hysteresis.tools.errors import MaxItersError, OutsideDomainError
from mcp_hysteresis.tools.fem import P1Space, gate_fluxes
from mcp_hysteresis.tools.material import material_preset
from mcp_hysteresis.tools.mesh import TJointParams, build_tjoint
from mcp_hysteresis.tools.sim import (
    DEFAULT_PROBES,
    CycleResult,
    LoadProgram,
    ProbeSeries,
    ProgramKind,
    check_probes,
    loop_area,
    loop_closure,
    run_cycle,
    run_single_step,
    write_outputs,
)
from mcp_hysteresis.tools.solvers import SolverConfig, Strategy
from mcp_hysteresis.tools.study import ordering_holds

LAVET5 = material_preset("lavet5")


@pytest.fixture(scope="module")
def mesh():
    return build_tjoint(TJointParams(target_h=0.5))


@pytest.fixture(scope="module")
def short_cycle(mesh) -> CycleResult:
    program = LoadProgram(steps_per_unit=8, t_end=1.0, amplitude=0.5)
    return run_cycle(mesh, [LAVET5], SolverConfig(), program)


def _circle(n: int, periods: int = 1) -> np.ndarray:
    theta = 2 * np.pi * np.arange(n * periods) / n
    return np.column_stack([theta, np.cos(theta), np.zeros_like(theta), np.sin(theta), np.zeros_like(theta)])


class TestLoadProgram:
    def test_single_step(self) -> None:
        program = LoadProgram(kind="single_step", phi1=-0.5, phi2=1.0)
        assert program.kind is ProgramKind.SINGLE_STEP
        assert program.n_steps == 1
        ((t, loads),) = program.schedule()
        assert t == 0.0
        assert loads.phi3 == pytest.approx(-0.5)

    def test_cycle_times(self) -> None:
        program = LoadProgram(steps_per_unit=50, t_end=2.0)
        times = program.times()
        assert program.n_steps == 100
        assert times[0] == pytest.approx(0.02)
        assert times[-1] == pytest.approx(2.0)

    def test_ramp(self) -> None:
        program = LoadProgram()
        assert program.ramp_factor(0.125) == pytest.approx(0.5)
        assert program.ramp_factor(0.25) == pytest.approx(1.0)
        assert program.ramp_factor(0.6) == 1.0
        assert LoadProgram(ramp=False).ramp_factor(0.1) == 1.0

    def test_loads_after_ramp(self) -> None:
        loads = LoadProgram().loads_at(1.0)
        assert loads.phi2 == pytest.approx(1.0)
        assert loads.phi1 == pytest.approx(-0.5)
        assert loads.phi3 == pytest.approx(-0.5)

    def test_three_phase_balance(self) -> None:
        for t, loads in LoadProgram(steps_per_unit=7, t_end=1.0).schedule():
            assert loads.phi1 + loads.phi2 + loads.phi3 == pytest.approx(0.0, abs=1e-12), t

    @pytest.mark.parametrize(
        "kwargs, match",
        [
            ({"steps_per_unit": 0}, "steps_per_unit"),
            ({"t_end": 0.0}, "t_end"),
            ({"amplitude": math.inf}, "amplitude"),
            ({"kind": "sweep"}, "sweep"),
        ],
    )
    def test_invalid(self, kwargs: dict, match: str) -> None:
        with pytest.raises(ValueError, match=match):
            LoadProgram(**kwargs)


class TestSingleStep:
    def test_fluxes_match_gates(self, mesh) -> None:
        space = P1Space.build(mesh)
        cfg = SolverConfig(term_rel_tol=1e-12)
        state, report = run_single_step(mesh, [LAVET5], cfg, -0.1, 0.2, space=space)
        assert report.converged
        fluxes = gate_fluxes(space, state.evaluation.b)
        assert fluxes["gate1"] == pytest.approx(-0.1, rel=1e-5)
        assert fluxes["gate2"] == pytest.approx(0.2, rel=1e-5)
        assert fluxes["gate3"] == pytest.approx(-0.1, rel=1e-5)

    def test_commit(self, mesh) -> None:
        state, _ = run_single_step(mesh, [LAVET5], SolverConfig(), -0.1, 0.2, commit=True)
        np.testing.assert_array_equal(state.states.j_prev, state.evaluation.j)
        assert np.abs(state.states.j_prev).max() > 0

    def test_not_committed_by_default(self, mesh) -> None:
        state, _ = run_single_step(mesh, [LAVET5], SolverConfig(), -0.1, 0.2)
        assert not state.states.j_prev.any()

    def test_state_required(self, mesh) -> None:
        with pytest.raises(ValueError, match="previous state is required"):
            run_single_step(mesh, [LAVET5], SolverConfig(), -0.1, 0.2, virgin=False)

    def test_reversed_loads_flip_the_potential(self, mesh) -> None:
        space = P1Space.build(mesh)
        cfg = SolverConfig(term_rel_tol=1e-12)
        forward, _ = run_single_step(mesh, [LAVET5], cfg, -0.1, 0.2, space=space)
        backward, _ = run_single_step(mesh, [LAVET5], cfg, 0.1, -0.2, space=space)
        scale = np.abs(forward.psi).max()
        assert scale > 0
        np.testing.assert_allclose(backward.psi, -forward.psi, rtol=0, atol=1e-10 * scale)
        np.testing.assert_allclose(backward.evaluation.j, -forward.evaluation.j, rtol=0, atol=1e-12)


class TestCycle:
    def test_every_step_recorded(self, short_cycle: CycleResult) -> None:
        assert len(short_cycle.reports) == 8
        assert all(r.converged for r in short_cycle.reports)
        assert len(short_cycle.probes) == 8
        assert set(short_cycle.probes.points) == set(DEFAULT_PROBES)
        assert short_cycle.final_state.t_index == 8

    def test_flux_balance(self, short_cycle: CycleResult) -> None:
        assert short_cycle.max_flux_imbalance() <= 1e-3
        assert short_cycle.fluxes[-1]["gate2"] == pytest.approx(0.5, rel=1e-3)

    def test_energy_records(self, short_cycle: CycleResult) -> None:
        assert [e.step for e in short_cycle.energy] == list(range(1, 9))
        assert all(e.dissipation_increment >= -1e-12 for e in short_cycle.energy)

    def test_summary_properties(self, short_cycle: CycleResult) -> None:
        assert short_cycle.average_iterations >= 1.0
        assert short_cycle.total_time > 0

    def test_probe_outside_domain(self, mesh) -> None:
        with pytest.raises(OutsideDomainError, match="probe 'P'"):
            run_cycle(mesh, [LAVET5], SolverConfig(), LoadProgram(steps_per_unit=4, t_end=0.5), {"P": (2.0, 2.0)})

    def test_failure_keeps_partial_result(self, mesh) -> None:
        program = LoadProgram(steps_per_unit=4, t_end=0.5, amplitude=0.5)
        with pytest.raises(MaxItersError, match="step 1") as info:
            run_cycle(mesh, [LAVET5], SolverConfig(strategy="gcm", max_iters=1), program)
        partial = info.value.partial
        assert partial.reports == []
        assert partial.final_state.t_index == 0


class TestProbes:
    def test_check_probes(self, mesh) -> None:
        check_probes(mesh, DEFAULT_PROBES)
        with pytest.raises(OutsideDomainError, match="lies outside the domain"):
            check_probes(mesh, {"far": (5.0, 0.0)})

    def test_series(self) -> None:
        series = ProbeSeries({"A": (0.0, 0.5)})
        assert len(series) == 0
        series.append("A", 0.1, np.array([1.0, 2.0]), np.array([0.1, 0.2]))
        assert series.as_array("A").tolist() == [[0.1, 1.0, 2.0, 0.1, 0.2]]


class TestLoopDiagnostics:
    def test_circle_area(self) -> None:
        assert loop_area(_circle(400)) == pytest.approx(math.pi, rel=1e-3)

    def test_clockwise_loop_is_negative(self) -> None:
        assert loop_area(_circle(400)[::-1]) == pytest.approx(-math.pi, rel=1e-3)

    def test_other_component(self) -> None:
        assert loop_area(_circle(100), component=1) == 0.0

    def test_bad_shape(self) -> None:
        with pytest.raises(ValueError, match="shape"):
            loop_area(np.zeros((4, 3)))
        with pytest.raises(ValueError, match="component"):
            loop_area(_circle(10), component=2)

    def test_closed_loop(self) -> None:
        assert loop_closure(_circle(20, periods=3), 20) == pytest.approx(0.0, abs=1e-12)

    def test_drifting_loop(self) -> None:
        series = _circle(20, periods=2)
        series[20:, 3] += 0.2
        assert loop_closure(series, 20) == pytest.approx(0.1)

    def test_needs_two_periods(self) -> None:
        with pytest.raises(ValueError, match="need two periods"):
            loop_closure(_circle(20), 20)


class TestOutputs:
    def test_files(self, short_cycle: CycleResult, tmp_path) -> None:
        written = write_outputs(short_cycle, tmp_path / "out", strategy="ssn", prefix="run_")
        names = {p.name for p in written}
        assert {"run_iterations.csv", "run_energy.csv", "run_fluxes.csv"} <= names
        assert {f"run_probes_{name}.csv" for name in DEFAULT_PROBES} <= names

    def test_iterations_csv(self, short_cycle: CycleResult, tmp_path) -> None:
        write_outputs(short_cycle, tmp_path, strategy="ssn")
        with open(tmp_path / "iterations.csv", newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["step", "strategy", "iterations", "wall_ms", "converged"]
        assert len(rows) == 9
        assert rows[1][1] == "ssn"

    def test_probe_csv_round_trip(self, short_cycle: CycleResult, tmp_path) -> None:
        write_outputs(short_cycle, tmp_path, strategy="ssn")
        data = np.loadtxt(tmp_path / "probes_M3.csv", delimiter=",", skiprows=1)
        np.testing.assert_array_equal(data, short_cycle.probes.as_array("M3"))


@pytest.fixture(scope="module")
def three_periods(mesh) -> CycleResult:
    program = LoadProgram(steps_per_unit=40, t_end=3.0, amplitude=0.5)
    return run_cycle(mesh, [LAVET5], SolverConfig(), program)


class TestLoadCycleLoops:
    def test_loops_close(self, three_periods: CycleResult) -> None:
        for name in DEFAULT_PROBES:
            series = three_periods.probes.as_array(name)
            assert len(series) == 120
            assert loop_closure(series, 40) <= 1e-2, name

    def test_loops_dissipate(self, three_periods: CycleResult) -> None:
        for name in DEFAULT_PROBES:
            last = three_periods.probes.as_array(name)[-40:]
            assert loop_area(last, 0) + loop_area(last, 1) > 0, name


class TestSolverOrdering:
    def test_average_iterations_follow_strategy_order(self, mesh) -> None:
        program = LoadProgram(steps_per_unit=10, t_end=2.0, amplitude=0.5)
        space = P1Space.build(mesh)
        average = {
            strategy: run_cycle(mesh, [LAVET5], SolverConfig(strategy=strategy), program, space=space).average_iterations
            for strategy in Strategy
        }
        assert average[Strategy.SSN] <= average[Strategy.LQN] <= average[Strategy.LCM] <= average[Strategy.GCM]
        rows = [{"strategy": s.value, "level": 0, "iterations": it} for s, it in average.items()]
        assert ordering_holds(rows)
