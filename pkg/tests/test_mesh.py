"""Tests for mesh builders, refinement and the text mesh format."""

import numpy as np
import pytest

from mcp_hysteresis.tools.errors import GeometryError, MeshValidationError, ParseError
from mcp_hysteresis.tools.mesh import (
    GATES,
    BoundaryTag,
    TJointParams,
    TriMesh,
    build_rectangle,
    build_tjoint,
    load_mesh,
    refine,
    refine_uniform,
    save_mesh,
)


def _single_triangle() -> TriMesh:
    return TriMesh(
        vertices=[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        triangles=[[0, 1, 2]],
        boundary_edges=[[0, 1], [1, 2], [2, 0]],
        boundary_tags=[BoundaryTag.WALL] * 3,
    )


_TRIANGLE_FILE = """\
trimesh2d v1
vertices 3
0 0
1 0
0 1
triangles 1
0 1 {third}
boundary {nb}
{boundary}
"""


class TestTJoint:
    def test_gate_lengths(self) -> None:
        mesh = build_tjoint(TJointParams(target_h=0.5))
        for gate in GATES:
            assert mesh.gate_length(gate) == pytest.approx(1.0, abs=1e-12)

    def test_area(self) -> None:
        mesh = build_tjoint()
        assert mesh.areas().sum() == pytest.approx(3.0 + 1.5, rel=1e-12)

    def test_simply_connected(self) -> None:
        mesh = build_tjoint(TJointParams(target_h=0.5))
        assert mesh.n_vertices - mesh.edge_count + mesh.n_triangles == 1

    def test_mesh_size(self) -> None:
        for target in (0.5, 0.3, 0.17):
            mesh = build_tjoint(TJointParams(target_h=target))
            assert mesh.h_max() <= target * (1 + 1e-12)

    def test_positive_orientation(self) -> None:
        assert np.all(build_tjoint().areas() > 0)

    def test_gate_positions(self) -> None:
        mesh = build_tjoint()
        np.testing.assert_allclose(mesh.vertices[mesh.tagged_vertices(BoundaryTag.GATE1), 0], -1.5)
        np.testing.assert_allclose(mesh.vertices[mesh.tagged_vertices(BoundaryTag.GATE2), 0], 1.5)
        np.testing.assert_allclose(mesh.vertices[mesh.tagged_vertices(BoundaryTag.GATE3), 1], -1.5)

    def test_custom_geometry(self) -> None:
        mesh = build_tjoint(TJointParams(limb_width=0.5, yoke_halflength=1.0, limb_length=2.0, target_h=0.2))
        assert mesh.areas().sum() == pytest.approx(2.0 * 0.5 + 0.5 * 2.0, rel=1e-12)
        assert mesh.gate_length(BoundaryTag.GATE3) == pytest.approx(0.5)

    def test_limb_wider_than_yoke(self) -> None:
        with pytest.raises(GeometryError, match="exceeds yoke length"):
            TJointParams(limb_width=4.0)

    def test_non_positive_size(self) -> None:
        with pytest.raises(GeometryError, match="target_h must be positive"):
            TJointParams(target_h=0.0)

    def test_stats(self) -> None:
        stats = build_tjoint().stats()
        assert stats["area"] == pytest.approx(4.5)
        assert set(stats["gate_lengths"]) == {"gate1", "gate2", "gate3"}


class TestRectangle:
    def test_gates_on_sides(self) -> None:
        mesh = build_rectangle(2.0, 1.0, 0.3, {"left": BoundaryTag.GATE1, "right": BoundaryTag.GATE2})
        assert mesh.gate_length(BoundaryTag.GATE1) == pytest.approx(1.0)
        assert mesh.gate_length(BoundaryTag.GATE2) == pytest.approx(1.0)
        assert mesh.gate_length(BoundaryTag.WALL) == pytest.approx(4.0)

    def test_unknown_side(self) -> None:
        with pytest.raises(GeometryError, match="unknown rectangle sides"):
            build_rectangle(tags={"front": BoundaryTag.GATE1})

    def test_split_gate_rejected(self) -> None:
        with pytest.raises(MeshValidationError, match="split into 2 pieces"):
            build_rectangle(tags={"left": BoundaryTag.GATE1, "right": BoundaryTag.GATE1})


class TestRefinement:
    def test_single_triangle(self) -> None:
        fine = refine_uniform(_single_triangle())
        fine.validate()
        assert fine.n_triangles == 4
        np.testing.assert_allclose(fine.areas(), 0.125)
        assert len(fine.boundary_edges) == 6

    def test_twice_multiplies_by_sixteen(self) -> None:
        mesh = build_tjoint(TJointParams(target_h=0.5))
        fine = refine(mesh, 2)
        fine.validate()
        assert fine.n_triangles == 16 * mesh.n_triangles
        for gate in GATES:
            assert fine.gate_length(gate) == pytest.approx(mesh.gate_length(gate), rel=1e-12)

    def test_domain_preserved(self) -> None:
        mesh = build_tjoint(TJointParams(target_h=0.5))
        fine = refine_uniform(mesh)
        assert fine.areas().sum() == pytest.approx(mesh.areas().sum(), rel=1e-12)
        np.testing.assert_array_equal(fine.vertices[: mesh.n_vertices], mesh.vertices)
        assert fine.h_max() == pytest.approx(mesh.h_max() / 2)

    def test_zero_levels(self) -> None:
        mesh = _single_triangle()
        assert refine(mesh, 0) is mesh

    def test_negative_levels(self) -> None:
        with pytest.raises(ValueError, match="levels must be non-negative"):
            refine(_single_triangle(), -1)

    def test_refined_mesh_is_validated(self) -> None:
        clockwise = TriMesh(
            vertices=[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles=[[0, 2, 1]],
            boundary_edges=[[0, 2], [2, 1], [1, 0]],
            boundary_tags=[BoundaryTag.WALL] * 3,
        )
        with pytest.raises(MeshValidationError, match="non-positive area"):
            refine_uniform(clockwise)


class TestValidation:
    def test_untagged_boundary_edge(self) -> None:
        mesh = TriMesh(
            vertices=[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles=[[0, 1, 2]],
            boundary_edges=[[0, 1], [1, 2]],
            boundary_tags=[0, 0],
        )
        with pytest.raises(MeshValidationError, match="untagged boundary edge"):
            mesh.validate()

    def test_clockwise_triangle(self) -> None:
        mesh = TriMesh(
            vertices=[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles=[[0, 2, 1]],
            boundary_edges=[[0, 2], [2, 1], [1, 0]],
            boundary_tags=[0, 0, 0],
        )
        with pytest.raises(MeshValidationError, match="non-positive area"):
            mesh.validate()

    def test_arrays_are_read_only(self) -> None:
        mesh = _single_triangle()
        with pytest.raises(ValueError):
            mesh.vertices[0, 0] = 5.0


class TestLocate:
    def test_inside_and_outside(self) -> None:
        mesh = build_tjoint()
        found = mesh.locate([[0.0, 0.5], [-1.2, 0.5], [0.0, -1.2], [1.2, -1.0], [0.0, 2.0]])
        assert np.all(found[:3] >= 0)
        assert list(found[3:]) == [-1, -1]

    def test_boundary_point(self) -> None:
        mesh = build_tjoint()
        assert mesh.locate([[-1.5, 0.5]])[0] >= 0


class TestBoundaryTag:
    def test_from_label(self) -> None:
        assert BoundaryTag.from_label(" Gate2 ") is BoundaryTag.GATE2
        assert BoundaryTag.GATE3.label == "gate3"

    def test_unknown_label(self) -> None:
        with pytest.raises(ValueError, match="Unknown boundary tag"):
            BoundaryTag.from_label("gate4")


class TestMeshFile:
    def test_round_trip(self, tmp_path) -> None:
        mesh = build_tjoint(TJointParams(target_h=0.5))
        path = tmp_path / "tjoint.mesh"
        save_mesh(mesh, path)
        loaded = load_mesh(path)
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.triangles, mesh.triangles)
        np.testing.assert_array_equal(loaded.boundary_edges, mesh.boundary_edges)
        np.testing.assert_array_equal(loaded.boundary_tags, mesh.boundary_tags)

    def test_comments_and_blank_lines(self, tmp_path) -> None:
        path = tmp_path / "tri.mesh"
        text = _TRIANGLE_FILE.format(third=2, nb=3, boundary="0 1 wall\n1 2 gate1  # hypotenuse\n\n2 0 wall")
        path.write_text("# single triangle\n" + text, encoding="utf-8")
        mesh = load_mesh(path)
        assert mesh.gate_length(BoundaryTag.GATE1) == pytest.approx(np.sqrt(2.0))

    def test_dangling_index(self, tmp_path) -> None:
        path = tmp_path / "bad.mesh"
        path.write_text(_TRIANGLE_FILE.format(third=5, nb=0, boundary=""), encoding="utf-8")
        with pytest.raises(ParseError, match="references vertex 5") as info:
            load_mesh(path)
        assert info.value.line == 7

    def test_untagged_edge(self, tmp_path) -> None:
        path = tmp_path / "open.mesh"
        path.write_text(_TRIANGLE_FILE.format(third=2, nb=2, boundary="0 1 wall\n1 2 wall"), encoding="utf-8")
        with pytest.raises(MeshValidationError, match="untagged boundary edge"):
            load_mesh(path)

    def test_bad_header(self, tmp_path) -> None:
        path = tmp_path / "header.mesh"
        path.write_text("trimesh3d v1\n", encoding="utf-8")
        with pytest.raises(ParseError, match="line 1"):
            load_mesh(path)

    def test_unknown_tag(self, tmp_path) -> None:
        path = tmp_path / "tag.mesh"
        path.write_text(
            _TRIANGLE_FILE.format(third=2, nb=3, boundary="0 1 wall\n1 2 door\n2 0 wall"), encoding="utf-8"
        )
        with pytest.raises(ParseError, match="Unknown boundary tag") as info:
            load_mesh(path)
        assert info.value.line == 10

    def test_truncated(self, tmp_path) -> None:
        path = tmp_path / "short.mesh"
        path.write_text("trimesh2d v1\nvertices 3\n0 0\n", encoding="utf-8")
        with pytest.raises(ParseError, match="unexpected end of file"):
            load_mesh(path)
