"""Triangular meshes: T-joint and rectangle builders, uniform refinement, point location and text I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from logging import getLogger
from pathlib import Path
from typing import TypedDict

import numpy as np
import numpy.typing as npt
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from mcp_hysteresis.tools.errors import GeometryError, MeshValidationError, ParseError

_logger = getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

MESH_HEADER = "trimesh2d v1"

# Local edges of a counter-clockwise triangle (a, b, c).
_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


class BoundaryTag(IntEnum):
    WALL = 0
    GATE1 = 1
    GATE2 = 2
    GATE3 = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> BoundaryTag:
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise ValueError(
                f"Unknown boundary tag: {label!r}. Choose from: "
                + ", ".join(t.label for t in cls)
            ) from None


GATES = (BoundaryTag.GATE1, BoundaryTag.GATE2, BoundaryTag.GATE3)


class MeshStats(TypedDict):
    vertices: int
    triangles: int
    boundary_edges: int
    area: float
    h_max: float
    gate_lengths: dict[str, float]


@dataclass(frozen=True)
class TJointParams:
    """T-shaped cross-section: horizontal yoke on top of a vertical limb (lengths in m)."""

    limb_width: float = 1.0
    yoke_halflength: float = 1.5
    limb_length: float = 1.5
    target_h: float = 0.25

    def __post_init__(self) -> None:
        for name in ("limb_width", "yoke_halflength", "limb_length", "target_h"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise GeometryError(f"{name} must be positive, got {value}")
        if self.limb_width > 2 * self.yoke_halflength:
            raise GeometryError(
                f"limb_width ({self.limb_width}) exceeds yoke length "
                f"({2 * self.yoke_halflength})"
            )


@dataclass(frozen=True)
class TriMesh:
    """Conforming, positively oriented triangulation with tagged boundary edges.

    ``boundary_edges`` are stored in the orientation of their triangle, so the
    domain lies to the left and the outward normal is (dy, -dx)/len.
    """

    vertices: FloatArray  # (nv, 2)
    triangles: IntArray  # (nt, 3)
    boundary_edges: IntArray  # (nb, 2)
    boundary_tags: npt.NDArray[np.int8]  # (nb,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(
            self, "boundary_edges", np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        )
        object.__setattr__(self, "boundary_tags", np.asarray(self.boundary_tags, dtype=np.int8).ravel())
        for arr in (self.vertices, self.triangles, self.boundary_edges, self.boundary_tags):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> FloatArray:
        """Signed triangle areas (positive for counter-clockwise triangles)."""
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def barycenters(self) -> FloatArray:
        return self.vertices[self.triangles].mean(axis=1)

    def edges(self) -> IntArray:
        """Unique undirected edges (sorted vertex pairs)."""
        return _edge_table(self.triangles)[0]

    @property
    def edge_count(self) -> int:
        return len(self.edges())

    def h_max(self) -> float:
        e = self.edges()
        return float(np.max(np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)))

    def edge_lengths(self, tag: BoundaryTag | None = None) -> FloatArray:
        edges = self.boundary_edges if tag is None else self.boundary_edges[self.boundary_tags == tag]
        return np.linalg.norm(self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]], axis=1)

    def gate_length(self, tag: BoundaryTag) -> float:
        return float(self.edge_lengths(tag).sum())

    def tagged_vertices(self, tag: BoundaryTag) -> IntArray:
        return np.unique(self.boundary_edges[self.boundary_tags == tag])

    def locate(self, points: npt.ArrayLike, *, tol: float = 1e-12) -> IntArray:
        """Index of a triangle containing each point, -1 for points outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.vertices[self.triangles]
        a, b, c = p[:, 0], p[:, 1], p[:, 2]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        out = np.full(len(pts), -1, dtype=np.int64)
        for i, q in enumerate(pts):
            l1 = ((q[0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (q[1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
            l2 = ((b[:, 0] - a[:, 0]) * (q[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (q[0] - a[:, 0])) / det
            inside = np.flatnonzero((l1 >= -tol) & (l2 >= -tol) & (1.0 - l1 - l2 >= -tol))
            if inside.size:
                out[i] = inside[0]
        return out

    def stats(self) -> MeshStats:
        return {
            "vertices": self.n_vertices,
            "triangles": self.n_triangles,
            "boundary_edges": len(self.boundary_edges),
            "area": float(self.areas().sum()),
            "h_max": self.h_max(),
            "gate_lengths": {g.label: self.gate_length(g) for g in GATES if np.any(self.boundary_tags == g)},
        }

    def validate(self) -> None:
        """Check conformity, orientation, boundary tagging and gate connectivity.

        Raises:
            MeshValidationError: On the first violated invariant.
        """
        nv = self.n_vertices
        if self.n_triangles == 0:
            raise MeshValidationError("mesh has no triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= nv:
            raise MeshValidationError("triangle vertex index out of range")
        areas = self.areas()
        bad = np.flatnonzero(areas <= 0)
        if bad.size:
            raise MeshValidationError(f"triangle {int(bad[0])} has non-positive area {areas[bad[0]]:.3g}")
        edges, counts, _ = _edge_table(self.triangles)
        if np.any(counts > 2):
            i = int(np.flatnonzero(counts > 2)[0])
            raise MeshValidationError(f"edge {tuple(edges[i])} shared by {counts[i]} triangles")
        if len(self.boundary_edges) != len(self.boundary_tags):
            raise MeshValidationError("boundary edge and tag counts differ")
        if np.any(~np.isin(self.boundary_tags, [int(t) for t in BoundaryTag])):
            raise MeshValidationError("unknown boundary tag value")
        expected = {tuple(e) for e in edges[counts == 1].tolist()}
        tagged = [tuple(sorted(e)) for e in self.boundary_edges.tolist()]
        if len(set(tagged)) != len(tagged):
            raise MeshValidationError("boundary edge tagged more than once")
        missing = expected - set(tagged)
        if missing:
            raise MeshValidationError(f"untagged boundary edge {sorted(missing)[0]}")
        extra = set(tagged) - expected
        if extra:
            raise MeshValidationError(f"tagged edge {sorted(extra)[0]} is not on the boundary")
        for gate in GATES:
            gate_edges = self.boundary_edges[self.boundary_tags == gate]
            if len(gate_edges) == 0:
                continue
            verts, local = np.unique(gate_edges, return_inverse=True)
            local = local.reshape(-1, 2)
            graph = coo_matrix(
                (np.ones(len(local)), (local[:, 0], local[:, 1])), shape=(len(verts), len(verts))
            )
            n_parts, _ = connected_components(graph, directed=False)
            if n_parts != 1:
                raise MeshValidationError(f"{gate.label} is split into {n_parts} pieces")


def _edge_table(triangles: IntArray) -> tuple[IntArray, IntArray, IntArray]:
    """Unique sorted edges, their triangle counts, and the (nt, 3) map to edge ids."""
    directed = triangles[:, _LOCAL_EDGES].reshape(-1, 2)
    keys = np.sort(directed, axis=1)
    edges, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return edges, counts, inverse.reshape(-1, 3)


def _boundary_of(triangles: IntArray) -> IntArray:
    """Directed boundary edges (edges used by exactly one triangle)."""
    directed = triangles[:, _LOCAL_EDGES].reshape(-1, 2)
    _, counts, inverse = _edge_table(triangles)
    return directed[counts[inverse.ravel()] == 1]


def _grid_axis(breakpoints: list[float], spacing: float) -> FloatArray:
    pieces = []
    for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
        n = max(1, math.ceil((hi - lo) / spacing - 1e-9))
        pieces.append(np.linspace(lo, hi, n + 1)[:-1])
    pieces.append(np.array([breakpoints[-1]]))
    return np.concatenate(pieces)


def _grid_mesh(
    xs: FloatArray, ys: FloatArray, keep_cell
) -> tuple[FloatArray, IntArray]:
    """Split kept grid cells into two counter-clockwise triangles and drop unused vertices."""
    ny = len(ys)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    centers_x = 0.5 * (xs[:-1] + xs[1:])
    centers_y = 0.5 * (ys[:-1] + ys[1:])
    cx, cy = np.meshgrid(centers_x, centers_y, indexing="ij")
    ci, cj = np.nonzero(keep_cell(cx, cy))
    a = ci * ny + cj
    b = (ci + 1) * ny + cj
    c = (ci + 1) * ny + cj + 1
    d = ci * ny + cj + 1
    tris = np.concatenate([np.stack([a, b, c], axis=1), np.stack([a, c, d], axis=1)])
    used, remap = np.unique(tris, return_inverse=True)
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)[used]
    return points, remap.reshape(-1, 3).astype(np.int64)


def _tag_by_midpoint(vertices: FloatArray, edges: IntArray, rules) -> npt.NDArray[np.int8]:
    mid = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    tags = np.full(len(edges), BoundaryTag.WALL, dtype=np.int8)
    for tag, selector in rules:
        tags[selector(mid[:, 0], mid[:, 1])] = tag
    return tags


def build_tjoint(params: TJointParams | None = None) -> TriMesh:
    """Triangulate the T-joint with max edge length <= target_h.

    Yoke [-Y, Y] x [0, w] on top of limb [-w/2, w/2] x [-L, 0]; gate 1 is the
    left yoke end, gate 2 the right yoke end, gate 3 the limb bottom, the rest
    is flux wall.

    Args:
        params: Geometry; defaults to the 1 m limb width benchmark.

    Returns:
        Validated TriMesh.

    Raises:
        GeometryError: On inconsistent parameters.
    """
    p = params or TJointParams()
    w, y_half, limb = p.limb_width, p.yoke_halflength, p.limb_length
    # right isosceles triangles: hypotenuse = sqrt(2) * leg
    spacing = p.target_h / math.sqrt(2.0)
    x_breaks = sorted({-y_half, -w / 2, w / 2, y_half})
    xs = _grid_axis(x_breaks, spacing)
    ys = _grid_axis([-limb, 0.0, w], spacing)

    def in_tjoint(cx: FloatArray, cy: FloatArray) -> npt.NDArray[np.bool_]:
        yoke = (cy > 0) & (cy < w)
        leg = (cy < 0) & (np.abs(cx) < w / 2)
        return yoke | leg

    vertices, triangles = _grid_mesh(xs, ys, in_tjoint)
    boundary = _boundary_of(triangles)
    tol = 1e-9 * max(y_half, limb, w)
    tags = _tag_by_midpoint(
        vertices,
        boundary,
        [
            (BoundaryTag.GATE1, lambda x, y: np.abs(x + y_half) < tol),
            (BoundaryTag.GATE2, lambda x, y: np.abs(x - y_half) < tol),
            (BoundaryTag.GATE3, lambda x, y: np.abs(y + limb) < tol),
        ],
    )
    mesh = TriMesh(vertices, triangles, boundary, tags)
    mesh.validate()
    _logger.debug("built T-joint mesh: %d vertices, %d triangles", mesh.n_vertices, mesh.n_triangles)
    return mesh


_SIDES = ("left", "right", "bottom", "top")


def build_rectangle(
    width: float = 1.0,
    height: float = 1.0,
    target_h: float = 0.25,
    tags: dict[str, BoundaryTag] | None = None,
) -> TriMesh:
    """Triangulate [0, width] x [0, height]; ``tags`` maps side names to boundary tags (default wall)."""
    for name, value in (("width", width), ("height", height), ("target_h", target_h)):
        if not value > 0:
            raise GeometryError(f"{name} must be positive, got {value}")
    tags = dict(tags or {})
    unknown = set(tags) - set(_SIDES)
    if unknown:
        raise GeometryError(f"unknown rectangle sides {sorted(unknown)}; use {', '.join(_SIDES)}")
    spacing = target_h / math.sqrt(2.0)
    xs = _grid_axis([0.0, width], spacing)
    ys = _grid_axis([0.0, height], spacing)
    vertices, triangles = _grid_mesh(xs, ys, lambda cx, cy: np.ones_like(cx, dtype=bool))
    boundary = _boundary_of(triangles)
    tol = 1e-9 * max(width, height)
    selectors = {
        "left": lambda x, y: np.abs(x) < tol,
        "right": lambda x, y: np.abs(x - width) < tol,
        "bottom": lambda x, y: np.abs(y) < tol,
        "top": lambda x, y: np.abs(y - height) < tol,
    }
    rules = [(tags[side], selectors[side]) for side in _SIDES if side in tags]
    mesh = TriMesh(vertices, triangles, boundary, _tag_by_midpoint(vertices, boundary, rules))
    mesh.validate()
    return mesh


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four through its edge midpoints and validate the result.

    Boundary tags are inherited by both halves of a split edge.
    """
    edges, _, tri_edges = _edge_table(mesh.triangles)
    nv = mesh.n_vertices
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])
    a, b, c = mesh.triangles.T
    m_ab, m_bc, m_ca = (nv + tri_edges[:, k] for k in range(3))
    triangles = np.concatenate(
        [
            np.stack([a, m_ab, m_ca], axis=1),
            np.stack([m_ab, b, m_bc], axis=1),
            np.stack([m_ca, m_bc, c], axis=1),
            np.stack([m_ab, m_bc, m_ca], axis=1),
        ]
    )
    # midpoint id of each boundary edge by lookup in the sorted edge table
    keys = np.sort(mesh.boundary_edges, axis=1)
    edge_index = {tuple(e): i for i, e in enumerate(edges.tolist())}
    mids = np.array([nv + edge_index[tuple(k)] for k in keys.tolist()], dtype=np.int64)
    start, end = mesh.boundary_edges.T
    boundary = np.concatenate([np.stack([start, mids], axis=1), np.stack([mids, end], axis=1)])
    tags = np.concatenate([mesh.boundary_tags, mesh.boundary_tags])
    fine = TriMesh(vertices, triangles, boundary, tags)
    fine.validate()
    return fine


def refine(mesh: TriMesh, levels: int) -> TriMesh:
    if levels < 0:
        raise ValueError(f"levels must be non-negative, got {levels}")
    for _ in range(levels):
        mesh = refine_uniform(mesh)
    return mesh


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def save_mesh(mesh: TriMesh, path: str | Path) -> None:
    """Write ``mesh`` in the ``trimesh2d v1`` text format."""
    lines = [MESH_HEADER, f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [
        f"{i} {j} {BoundaryTag(int(t)).label}"
        for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist())
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _content_lines(text: str) -> list[tuple[int, list[str]]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].split()
        if body:
            out.append((lineno, body))
    return out


def load_mesh(path: str | Path) -> TriMesh:
    """Read a ``trimesh2d v1`` file.

    Raises:
        ParseError: Malformed content, with the offending line number.
        MeshValidationError: Well-formed file describing an invalid mesh.
    """
    rows = _content_lines(Path(path).read_text(encoding="utf-8"))
    pos = 0

    def next_row(expect: str) -> tuple[int, list[str]]:
        nonlocal pos
        if pos >= len(rows):
            last = rows[-1][0] if rows else 0
            raise ParseError(f"unexpected end of file, expected {expect}", line=last + 1)
        row = rows[pos]
        pos += 1
        return row

    lineno, words = next_row("header")
    if " ".join(words) != MESH_HEADER:
        raise ParseError(f"expected header {MESH_HEADER!r}, got {' '.join(words)!r}", line=lineno)

    def section(name: str) -> int:
        lineno, words = next_row(f"'{name} <count>'")
        if len(words) != 2 or words[0] != name:
            raise ParseError(f"expected '{name} <count>', got {' '.join(words)!r}", line=lineno)
        try:
            count = int(words[1])
        except ValueError:
            raise ParseError(f"invalid {name} count {words[1]!r}", line=lineno) from None
        if count < 0:
            raise ParseError(f"negative {name} count {count}", line=lineno)
        return count

    nv = section("vertices")
    vertices = np.empty((nv, 2))
    for i in range(nv):
        lineno, words = next_row("vertex")
        if len(words) != 2:
            raise ParseError(f"vertex needs 2 coordinates, got {len(words)}", line=lineno)
        try:
            vertices[i] = [float(w) for w in words]
        except ValueError:
            raise ParseError(f"invalid vertex coordinates {' '.join(words)!r}", line=lineno) from None

    def indices(words: list[str], count: int, lineno: int, what: str) -> list[int]:
        if len(words) < count:
            raise ParseError(f"{what} needs {count} vertex indices", line=lineno)
        try:
            idx = [int(w) for w in words[:count]]
        except ValueError:
            raise ParseError(f"invalid {what} indices {' '.join(words)!r}", line=lineno) from None
        for v in idx:
            if not 0 <= v < nv:
                raise ParseError(f"{what} references vertex {v}, mesh has {nv}", line=lineno)
        return idx

    nt = section("triangles")
    triangles = np.empty((nt, 3), dtype=np.int64)
    for i in range(nt):
        lineno, words = next_row("triangle")
        if len(words) != 3:
            raise ParseError(f"triangle needs 3 vertex indices, got {len(words)}", line=lineno)
        triangles[i] = indices(words, 3, lineno, "triangle")

    nb = section("boundary")
    edges = np.empty((nb, 2), dtype=np.int64)
    tags = np.empty(nb, dtype=np.int8)
    for i in range(nb):
        lineno, words = next_row("boundary edge")
        if len(words) != 3:
            raise ParseError(f"boundary edge needs 'i j TAG', got {' '.join(words)!r}", line=lineno)
        edges[i] = indices(words, 2, lineno, "boundary edge")
        try:
            tags[i] = BoundaryTag.from_label(words[2])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None

    if pos < len(rows):
        raise ParseError("trailing content after boundary section", line=rows[pos][0])

    mesh = TriMesh(vertices, triangles, edges, tags)
    mesh.validate()
    return mesh
