"""Tests for the brute-force oracle and the material property suite."""

from dataclasses import replace

import numpy as np
import pytest

from mcp_hysteresis.tools.material import evaluate_stack, material_preset, solve_cells
from mcp_hysteresis.tools.verify import _coenergy_gradient_margins, brute_force_minimizer, run_property_suite

PROPERTIES = {
    "oracle",
    "kkt",
    "nonexpansive",
    "monotone",
    "lipschitz",
    "coenergy_gradient",
    "jacobian_bounds",
    "semismooth",
}


class TestOracle:
    @pytest.mark.parametrize("preset", ["single_smooth", "single_pinned"])
    def test_matches_local_update(self, preset: str) -> None:
        cell = material_preset(preset).cells[0]
        h = np.array([[30.0, 0.0], [5.0, -3.0], [-80.0, 40.0], [0.0, 0.0]])
        jp = np.array([[0.0, 0.0], [0.1, 0.0], [0.05, -0.2], [0.0, 0.15]])
        expected = solve_cells(cell, h, jp).j
        np.testing.assert_allclose(brute_force_minimizer(cell, h, jp), expected, atol=1e-6)

    def test_sticking_point(self) -> None:
        cell = material_preset("single_pinned").cells[0]
        jp = np.array([[0.02, 0.01]])
        h = np.array([[1.0, 1.0]])
        # |h - u'(jp)| stays below chi = 20 for this small field
        np.testing.assert_allclose(brute_force_minimizer(cell, h, jp), jp, atol=1e-6)

    def test_plane_only(self) -> None:
        cell = material_preset("single_smooth").cells[0]
        with pytest.raises(ValueError, match="works in the plane"):
            brute_force_minimizer(cell, np.zeros((1, 3)), np.zeros((1, 3)))


class TestPropertySuite:
    def test_smooth_cell_passes(self) -> None:
        report = run_property_suite(material_preset("single_smooth"), samples=300, seed=1, semismooth_samples=100)
        assert report.passed, report.to_dict()
        assert set(report.results) == PROPERTIES

    def test_lavet5_passes(self) -> None:
        report = run_property_suite(material_preset("lavet5"), samples=300, seed=7, semismooth_samples=100)
        assert report.passed, report.to_dict()
        assert report.results["semismooth"].samples > 0

    def test_vacuum(self) -> None:
        report = run_property_suite(material_preset("vacuum"), samples=50, seed=0)
        assert report.passed
        assert report.results["oracle"].samples == 0
        assert report.results["monotone"].samples == 50

    def test_scaled_jacobian_is_caught(self) -> None:
        report = run_property_suite(
            material_preset("lavet5"), samples=300, seed=7, jacobian_scale=1.1, semismooth_samples=100
        )
        assert not report.passed
        assert not report.results["semismooth"].passed
        assert report.results["semismooth"].worst_margin < 0

    def test_deterministic(self) -> None:
        stack = material_preset("single_pinned")
        first = run_property_suite(stack, samples=100, seed=3, semismooth_samples=20).to_dict()
        second = run_property_suite(stack, samples=100, seed=3, semismooth_samples=20).to_dict()
        assert first == second

    def test_report_dict(self) -> None:
        data = run_property_suite(material_preset("single_pinned"), samples=100, seed=3).to_dict()
        assert data["material"] == "single_pinned"
        assert data["seed"] == 3
        assert list(data["properties"]) == sorted(PROPERTIES)
        assert set(data["properties"]["oracle"]) == {
            "name",
            "passed",
            "samples",
            "violations",
            "worst_margin",
            "detail",
        }

    def test_no_samples(self) -> None:
        with pytest.raises(ValueError, match="samples must be positive"):
            run_property_suite(material_preset("lavet5"), samples=0)


class TestCoenergyGradient:
    def _sample(self, preset: str):
        stack = material_preset(preset)
        h = np.array([[10.0, 0.0], [65.0, -20.0], [-150.0, 40.0], [0.0, 300.0]])
        memory = np.zeros((len(h), stack.size, 2))
        return stack, h, memory, evaluate_stack(stack, h, memory)

    def test_exact_b_passes(self) -> None:
        stack, h, memory, ev = self._sample("single_smooth")
        margins, skipped = _coenergy_gradient_margins(stack, h, memory, ev)
        assert skipped == 0
        assert np.all(margins >= 0)

    def test_small_error_in_b_is_caught(self) -> None:
        stack, h, memory, ev = self._sample("single_smooth")
        wrong = replace(ev, b=ev.b * (1.0 + 1e-5))
        margins, _ = _coenergy_gradient_margins(stack, h, memory, wrong)
        assert np.all(margins < 0)

    def test_stencil_across_switch_is_skipped(self) -> None:
        stack = material_preset("single_pinned")
        # chi = 20 for the virgin cell: H = 20 is the switch point
        h = np.array([[20.0, 0.0], [100.0, 0.0]])
        memory = np.zeros((2, 1, 2))
        ev = evaluate_stack(stack, h, memory)
        margins, skipped = _coenergy_gradient_margins(stack, h, memory, ev)
        assert skipped == 1
        assert margins.shape == (1,)
        assert margins[0] >= 0
