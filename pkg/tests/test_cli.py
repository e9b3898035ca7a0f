"""Tests for the command line entry point and its exit codes."""

import csv
import json

import pytest

from mcp_hysteresis.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from mcp_hysteresis.tools.mesh import load_mesh

_STEP = """\
seed = 1
refinement_levels = [0]

[mesh]
target_h = 0.5

[materials]
preset = "lavet5"

[solver]
{solver}

[program]
kind = "single_step"
phi1 = -0.1
phi2 = 0.2
"""


def _write(tmp_path, text: str, name: str = "run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _step_config(tmp_path, solver: str = 'strategy = "ssn"') -> str:
    return _write(tmp_path, _STEP.format(solver=solver))


def _verify_config(tmp_path, preset: str) -> str:
    return _write(
        tmp_path,
        f'seed = 3\n\n[materials]\npreset = "{preset}"\n\n[verify]\nsamples = 200\nsemismooth_samples = 50\n',
    )


def _read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


class TestVerifyMaterial:
    def test_passes(self, tmp_path, capsys) -> None:
        out = tmp_path / "out"
        code = main(["verify-material", "--config", _verify_config(tmp_path, "single_smooth"), "--output", str(out)])
        assert code == EXIT_OK
        report = _read_json(out / "material_report.json")
        assert report["passed"] is True
        assert report["seed"] == 3
        assert "material_report.json" in capsys.readouterr().out

    def test_seed_override(self, tmp_path) -> None:
        out = tmp_path / "out"
        main(["verify-material", "--config", _verify_config(tmp_path, "single_smooth"), "--output", str(out), "--seed", "9"])
        assert _read_json(out / "material_report.json")["seed"] == 9

    def test_injected_fault_fails(self, tmp_path) -> None:
        out = tmp_path / "out"
        code = main(
            [
                "verify-material",
                "--config",
                _verify_config(tmp_path, "lavet5"),
                "--output",
                str(out),
                "--jacobian-scale",
                "1.1",
            ]
        )
        assert code == EXIT_FAILURE
        assert _read_json(out / "material_report.json")["properties"]["semismooth"]["passed"] is False


class TestRunStep:
    def test_writes_outputs(self, tmp_path, capsys) -> None:
        out = tmp_path / "out"
        assert main(["run-step", "--config", _step_config(tmp_path), "--output", str(out)]) == EXIT_OK
        summary = _read_json(out / "summary.json")
        assert summary["command"] == "run-step"
        assert summary["failed"] is False
        (run,) = summary["runs"]
        assert run["strategy"] == "ssn"
        assert run["converged"] is True
        assert len(run["step_sizes"]) == run["iterations"]
        with open(out / "level0" / "ssn" / "iterations.csv", newline="", encoding="utf-8") as f:
            assert len(list(csv.reader(f))) == 2
        assert "level 0 ssn" in capsys.readouterr().out

    def test_solver_failure(self, tmp_path) -> None:
        out = tmp_path / "out"
        config = _step_config(tmp_path, 'strategy = "gcm"\nmax_iters = 1')
        assert main(["run-step", "--config", config, "--output", str(out)]) == EXIT_FAILURE
        summary = _read_json(out / "summary.json")
        assert summary["failed"] is True
        assert "step 1" in summary["error"]
        assert (out / "level0" / "gcm" / "iterations.csv").exists()


class TestCompareSolvers:
    def test_agree(self, tmp_path) -> None:
        out = tmp_path / "out"
        solver = 'strategies = ["ssn", "gcm"]\nterm_rel_tol = 1e-14\nmax_iters = 5000\nagreement_rel_tol = 1e-6'
        assert main(["compare-solvers", "--config", _step_config(tmp_path, solver), "--output", str(out)]) == EXIT_OK
        summary = _read_json(out / "summary.json")
        assert summary["agree"] is True
        assert [row["strategy"] for row in summary["comparison"]] == ["ssn", "gcm"]
        assert summary["comparison"][0]["rel_diff"] == 0.0
        with open(out / "compare.csv", newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert [r["strategy"] for r in rows] == ["ssn", "gcm"]

    def test_mismatch(self, tmp_path) -> None:
        out = tmp_path / "out"
        solver = 'strategies = ["ssn", "gcm"]\ngcm_mu_r = 5000.0\nmax_iters = 2000\nagreement_rel_tol = 1e-15'
        assert main(["compare-solvers", "--config", _step_config(tmp_path, solver), "--output", str(out)]) == EXIT_FAILURE
        assert _read_json(out / "summary.json")["agree"] is False

    def test_single_strategy(self, tmp_path, capsys) -> None:
        code = main(["compare-solvers", "--config", _step_config(tmp_path), "--strategy", "ssn"])
        assert code == EXIT_USAGE
        assert "at least two different strategies" in capsys.readouterr().err


class TestBuildMesh:
    def test_levels(self, tmp_path) -> None:
        config = _write(tmp_path, "refinement_levels = [0, 1]\n\n[mesh]\ntarget_h = 0.5\n")
        out = tmp_path / "meshes"
        assert main(["build-mesh", "--config", config, "--output", str(out), "--prefix", "t"]) == EXIT_OK
        coarse = load_mesh(out / "t_level0.mesh")
        fine = load_mesh(out / "t_level1.mesh")
        assert fine.n_triangles == 4 * coarse.n_triangles


class TestUsageErrors:
    def test_probe_outside(self, tmp_path, capsys) -> None:
        config = _write(tmp_path, "[mesh]\ntarget_h = 0.5\n\n[probes]\nX = [5.0, 5.0]\n")
        assert main(["run-cycle", "--config", config, "--output", str(tmp_path / "out")]) == EXIT_USAGE
        assert "probe 'X'" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path) -> None:
        config = _write(tmp_path, "[solver]\nnewton = true\n")
        assert main(["run-step", "--config", config]) == EXIT_USAGE

    def test_missing_config(self, tmp_path) -> None:
        assert main(["run-step", "--config", str(tmp_path / "absent.toml")]) == EXIT_USAGE

    def test_bad_strategy(self, tmp_path) -> None:
        assert main(["run-step", "--config", _step_config(tmp_path), "--strategy", "cg"]) == EXIT_USAGE

    def test_bad_mesh_file(self, tmp_path) -> None:
        (tmp_path / "broken.mesh").write_text("trimesh2d v1\nvertices 3\n", encoding="utf-8")
        config = _write(tmp_path, '[mesh]\nkind = "file"\npath = "broken.mesh"\n')
        assert main(["build-mesh", "--config", config, "--output", str(tmp_path / "out")]) == EXIT_USAGE

    @pytest.mark.parametrize("argv", [[], ["bogus"], ["run-step", "--seed", "x"]])
    def test_argparse_errors(self, argv: list[str]) -> None:
        assert main(argv) == EXIT_USAGE

    def test_version(self, capsys) -> None:
        assert main(["--version"]) == EXIT_OK
        assert "0.1.0" in capsys.readouterr().out
