"""Tests for the MCP tool functions (called directly, without a transport)."""

import json

import pytest

pytest.importorskip("mcp")

from mcp_hysteresis import server  # noqa: E402


class TestMaterialPoint:
    def test_lavet5(self) -> None:
        result = server.material_point_tool(30.0, 0.0)
        assert result["material"] == "lavet5"
        assert result["branches"] == ["smooth", "sliding", "sliding", "sticking", "sticking"]
        assert len(result["j"]) == 5
        assert result["b"][0] > 0
        assert result["b"][1] == pytest.approx(0.0, abs=1e-15)
        assert len(result["jacobian"]) == 2

    def test_custom_cells(self) -> None:
        cells = [{"a_strength": 65.0, "j_sat": 0.3, "chi": 20.0}]
        result = server.material_point_tool(10.0, 0.0, cells=cells)
        assert result["branches"] == ["sticking"]
        assert result["j"] == [[0.0, 0.0]]

    def test_unknown_preset(self) -> None:
        result = server.material_point_tool(1.0, 0.0, preset="steel")
        assert "Unknown material preset" in result["error"]

    def test_bad_cells(self) -> None:
        result = server.material_point_tool(1.0, 0.0, cells=[{"a_strength": -1.0, "j_sat": 0.3}])
        assert "a_strength must be positive" in result["error"]


class TestBuildMesh:
    def test_stats(self) -> None:
        coarse = server.build_mesh_tool(target_h=0.5)
        fine = server.build_mesh_tool(target_h=0.5, refinement_levels=1)
        assert fine["triangles"] == 4 * coarse["triangles"]
        assert coarse["area"] == pytest.approx(4.5)
        assert coarse["gate_lengths"]["gate3"] == pytest.approx(1.0)

    def test_invalid(self) -> None:
        assert "exceeds yoke length" in server.build_mesh_tool(limb_width=5.0)["error"]
        assert "non-negative" in server.build_mesh_tool(refinement_levels=-1)["error"]


class TestStudies:
    def test_verify_material(self, tmp_path) -> None:
        result = server.verify_material_tool(output_dir=str(tmp_path), seed=5, samples=100)
        assert result["samples"] == 100
        assert result["seed"] == 5
        assert (tmp_path / "material_report.json").exists()

    def test_run_step(self, tmp_path) -> None:
        config = tmp_path / "step.toml"
        config.write_text(
            '[mesh]\ntarget_h = 0.5\n\n[program]\nkind = "single_step"\nphi1 = -0.1\nphi2 = 0.2\n',
            encoding="utf-8",
        )
        result = server.run_step_tool(str(config), str(tmp_path / "out"), strategy="lqn")
        assert result["command"] == "run-step"
        assert result["runs"][0]["strategy"] == "lqn"

    def test_missing_config(self, tmp_path) -> None:
        result = server.compare_solvers_tool(str(tmp_path / "absent.toml"))
        assert "config file not found" in result["error"]

    def test_bad_strategy(self) -> None:
        assert "Unknown strategy" in server.run_cycle_tool(strategy="cg")["error"]


class TestResources:
    def test_presets(self) -> None:
        presets = json.loads(server.material_presets_resource())
        assert {"lavet5", "single_smooth", "single_pinned", "vacuum"} <= set(presets)
        assert len(presets["lavet5"]["cells"]) == 5

    def test_prompt(self) -> None:
        text = server.hysteresis_study("sweep the flux amplitude")
        assert "sweep the flux amplitude" in text
        assert "verify_material_tool" in text
