"""P1 scalar-potential finite elements with gate equipotentials, one-point quadrature and sparse SPD solves."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from logging import getLogger
from typing import Sequence

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from mcp_hysteresis.tools.errors import (
    HysteresisError,
    NotSPDError,
    OutsideDomainError,
    StateValidationError,
)
from mcp_hysteresis.tools.material import (
    MaterialStack,
    StackEvaluation,
    StackState,
    evaluate_stack,
    forward_b,
)
from mcp_hysteresis.tools.mesh import GATES, BoundaryTag, TriMesh

try:  # optional CHOLMOD backend
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, cholesky

    HAS_CHOLMOD = True
except ImportError:  # pragma: no cover - depends on the environment
    HAS_CHOLMOD = False

_logger = getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]


# ---------------------------------------------------------------------------
# Degrees of freedom
# ---------------------------------------------------------------------------


class DofKind(IntEnum):
    FREE = 0
    SLAVE = 1
    GROUNDED = 2


@dataclass(frozen=True)
class DofMap:
    """Vertex to unknown map: free vertices first (by vertex index), then one master per gate 2/3.

    Gate 1 vertices are grounded (potential 0); every vertex of gate 2 or 3
    is a slave of its gate's master DOF.
    """

    kind: npt.NDArray[np.int8]  # (nv,)
    index: IntArray  # (nv,) free or master index, -1 when grounded
    masters: dict[BoundaryTag, int]
    n_free: int
    prolongation: sp.csr_matrix = field(repr=False)  # (nv, n_free)

    @classmethod
    def from_mesh(cls, mesh: TriMesh, *, ground_vertex: int | None = None) -> DofMap:
        """Build the map; without a gate 1 one vertex (default 0) is grounded instead."""
        nv = mesh.n_vertices
        kind = np.full(nv, DofKind.FREE, dtype=np.int8)
        gate_of = np.full(nv, -1, dtype=np.int64)
        for gate in GATES:
            verts = mesh.tagged_vertices(gate)
            gate_of[verts] = int(gate)
        grounded = gate_of == BoundaryTag.GATE1
        if not grounded.any():
            grounded[0 if ground_vertex is None else ground_vertex] = True
        elif ground_vertex is not None:
            grounded[ground_vertex] = True
        kind[grounded] = DofKind.GROUNDED
        slave = (gate_of == BoundaryTag.GATE2) | (gate_of == BoundaryTag.GATE3)
        slave &= ~grounded
        kind[slave] = DofKind.SLAVE

        index = np.full(nv, -1, dtype=np.int64)
        free = np.flatnonzero(kind == DofKind.FREE)
        index[free] = np.arange(len(free))
        n_free = len(free)
        masters: dict[BoundaryTag, int] = {}
        for gate in (BoundaryTag.GATE2, BoundaryTag.GATE3):
            members = slave & (gate_of == gate)
            if members.any():
                masters[gate] = n_free
                index[members] = n_free
                n_free += 1

        rows = np.flatnonzero(index >= 0)
        prolongation = sp.csr_matrix(
            (np.ones(len(rows)), (rows, index[rows])), shape=(nv, n_free)
        )
        return cls(kind=kind, index=index, masters=masters, n_free=n_free, prolongation=prolongation)

    def expand(self, psi: npt.ArrayLike) -> FloatArray:
        """Per-vertex values: gates take their master value, grounded vertices 0."""
        return self.prolongation @ np.asarray(psi, dtype=float)


@dataclass(frozen=True)
class FieldVector:
    """Potential values at the free DOFs of a DofMap."""

    values: FloatArray
    dofmap: DofMap = field(repr=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=float)
        if arr.shape != (self.dofmap.n_free,):
            raise ValueError(f"expected {self.dofmap.n_free} values, got shape {arr.shape}")
        object.__setattr__(self, "values", arr)

    def nodal(self) -> FloatArray:
        return self.dofmap.expand(self.values)


@dataclass(frozen=True)
class GateLoads:
    """Total fluxes through gates 1 and 2 (Wb per m depth); gate 3 closes the balance."""

    phi1: float = 0.0
    phi2: float = 0.0

    @property
    def phi3(self) -> float:
        return -(self.phi1 + self.phi2)

    def as_dict(self) -> dict[str, float]:
        return {"gate1": self.phi1, "gate2": self.phi2, "gate3": self.phi3}


# ---------------------------------------------------------------------------
# Quadrature point memory
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadPointState:
    """Previous partial polarizations at every triangle barycenter.

    ``j_prev`` has shape (nt, K_max, 2); triangles whose stack is shorter than
    K_max keep zeros in the unused slots.
    """

    material_ids: IntArray
    j_prev: FloatArray

    def __post_init__(self) -> None:
        ids = np.asarray(self.material_ids, dtype=np.int64).ravel()
        arr = np.asarray(self.j_prev, dtype=float)
        if arr.ndim != 3 or arr.shape[0] != len(ids) or arr.shape[2] != 2:
            raise StateValidationError(
                f"j_prev must have shape ({len(ids)}, K, 2), got {arr.shape}"
            )
        object.__setattr__(self, "material_ids", ids)
        object.__setattr__(self, "j_prev", arr)

    @classmethod
    def virgin(
        cls,
        mesh: TriMesh,
        materials: Sequence[MaterialStack],
        material_ids: npt.ArrayLike | None = None,
    ) -> QuadPointState:
        ids = np.zeros(mesh.n_triangles, dtype=np.int64) if material_ids is None else material_ids
        k_max = max((m.size for m in materials), default=0)
        return cls(material_ids=ids, j_prev=np.zeros((mesh.n_triangles, k_max, 2)))

    @property
    def n_triangles(self) -> int:
        return len(self.material_ids)

    def stack_state(self, t: int, materials: Sequence[MaterialStack]) -> StackState:
        stack = materials[int(self.material_ids[t])]
        return StackState(self.j_prev[t, : stack.size])

    def validate(self, materials: Sequence[MaterialStack]) -> None:
        """Check material ids and |J_k| < Js_k at every triangle.

        Raises:
            StateValidationError: With the first offending triangle.
        """
        if self.material_ids.size and (
            self.material_ids.min() < 0 or self.material_ids.max() >= len(materials)
        ):
            raise StateValidationError(f"material ids must lie in [0, {len(materials)})")
        k_max = max((m.size for m in materials), default=0)
        if self.j_prev.shape[1] < k_max:
            raise StateValidationError(f"state holds {self.j_prev.shape[1]} slots, need {k_max}")
        norms = np.linalg.norm(self.j_prev, axis=2)
        for m, stack in enumerate(materials):
            rows = np.flatnonzero(self.material_ids == m)
            if rows.size == 0 or stack.size == 0:
                continue
            js = np.array([c.j_sat for c in stack.cells])
            over = norms[rows, : stack.size] >= js
            if over.any():
                t, k = np.argwhere(over)[0]
                raise StateValidationError(
                    f"triangle {int(rows[t])}: |J_{int(k)}| = {norms[rows[t], k]:.6g} "
                    f">= Js = {js[k]}"
                )

    def with_polarizations(self, j_new: npt.ArrayLike) -> QuadPointState:
        return QuadPointState(self.material_ids.copy(), np.array(j_new, dtype=float))


# ---------------------------------------------------------------------------
# Function space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class P1Space:
    """Precomputed geometry of the P1 space on a mesh.

    ``gradient`` maps free DOF values to the stacked constant gradients
    [g_0x, g_0y, g_1x, ...] of all triangles (shape (2 nt, n_free)).
    """

    mesh: TriMesh
    dofmap: DofMap
    areas: FloatArray
    shape_gradients: FloatArray  # (nt, 3, 2)
    vertex_gradient: sp.csr_matrix = field(repr=False)  # (2 nt, nv)
    gradient: sp.csr_matrix = field(repr=False)  # (2 nt, n_free)

    @classmethod
    def build(cls, mesh: TriMesh, dofmap: DofMap | None = None) -> P1Space:
        dofmap = dofmap or DofMap.from_mesh(mesh)
        p = mesh.vertices[mesh.triangles]
        x, y = p[..., 0], p[..., 1]
        areas = mesh.areas()
        two_a = 2.0 * areas
        grads = np.empty((mesh.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = (y[:, j] - y[:, k]) / two_a
            grads[:, i, 1] = (x[:, k] - x[:, j]) / two_a
        nt = mesh.n_triangles
        rows = (2 * np.arange(nt)[:, None, None] + np.arange(2)[None, None, :]).repeat(3, axis=1)
        cols = np.broadcast_to(mesh.triangles[:, :, None], (nt, 3, 2))
        vertex_gradient = sp.csr_matrix(
            (grads.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * nt, mesh.n_vertices)
        )
        gradient = (vertex_gradient @ dofmap.prolongation).tocsr()
        return cls(
            mesh=mesh,
            dofmap=dofmap,
            areas=areas,
            shape_gradients=grads,
            vertex_gradient=vertex_gradient,
            gradient=gradient,
        )

    @property
    def n_free(self) -> int:
        return self.dofmap.n_free

    def grad(self, psi: npt.ArrayLike) -> FloatArray:
        """Constant gradient of psi_h on every triangle, shape (nt, 2)."""
        return (self.gradient @ np.asarray(psi, dtype=float)).reshape(-1, 2)

    def weak_divergence(self, flux: npt.ArrayLike) -> FloatArray:
        """sum_T |T| flux_T . grad v_T for every free test function v."""
        weighted = self.areas[:, None] * np.asarray(flux, dtype=float)
        return self.gradient.T @ weighted.ravel()

    def load_vector(self, loads: GateLoads) -> FloatArray:
        """l(v) = Phi_2 c_2(v) + Phi_3 c_3(v) on the master DOFs."""
        vec = np.zeros(self.n_free)
        for gate, value in ((BoundaryTag.GATE2, loads.phi2), (BoundaryTag.GATE3, loads.phi3)):
            if gate in self.dofmap.masters:
                vec[self.dofmap.masters[gate]] = value
        return vec

    def block_operator(self, blocks: npt.ArrayLike) -> sp.csr_matrix:
        """D^T blockdiag(|T| S_T) D for per-triangle 2x2 blocks or per-triangle scalars."""
        nt = self.mesh.n_triangles
        arr = np.asarray(blocks, dtype=float)
        if arr.ndim <= 1:
            arr = np.broadcast_to(arr.reshape(-1, 1, 1), (nt, 1, 1)) * np.eye(2)
        weighted = self.areas[:, None, None] * arr
        diag = sp.bsr_matrix(
            (weighted, np.arange(nt), np.arange(nt + 1)), shape=(2 * nt, 2 * nt)
        )
        mat = (self.gradient.T @ (diag @ self.gradient)).tocsr()
        # exact symmetry regardless of summation order
        return ((mat + mat.T) * 0.5).tocsr()

    def linear_stiffness(self) -> sp.csr_matrix:
        """K_lin with entries sum_T |T| grad v . grad w."""
        return self.block_operator(np.ones(self.mesh.n_triangles))


def gradient_at_barycenter(space: P1Space, psi: npt.ArrayLike, t: int) -> FloatArray:
    """Exact constant gradient of the P1 interpolant of psi on triangle t."""
    if not 0 <= t < space.mesh.n_triangles:
        raise IndexError(f"triangle index {t} out of range [0, {space.mesh.n_triangles})")
    nodal = space.dofmap.expand(psi)[space.mesh.triangles[t]]
    return nodal @ space.shape_gradients[t]


def energy_norm(space: P1Space, psi: npt.ArrayLike) -> float:
    """||grad psi||_h = sqrt(sum_T |T| |grad psi_T|^2)."""
    g = space.grad(psi)
    return float(np.sqrt(np.sum(space.areas * np.einsum("ij,ij->i", g, g))))


# ---------------------------------------------------------------------------
# Material evaluation and assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldEvaluation:
    """Material response on every triangle for one potential."""

    h: FloatArray  # (nt, 2)
    b: FloatArray  # (nt, 2)
    j: FloatArray  # (nt, K_max, 2)
    wstar: FloatArray  # (nt,)
    dissipation: FloatArray  # (nt,)
    jacobian: FloatArray | None = None  # (nt, 2, 2)


def field_h(space: P1Space, psi: npt.ArrayLike, h_source: npt.ArrayLike | None = None) -> FloatArray:
    """H = H_s - grad psi per triangle."""
    h = -space.grad(psi)
    if h_source is not None:
        h = h + np.broadcast_to(np.asarray(h_source, dtype=float), h.shape)
    return h


def evaluate_field(
    space: P1Space,
    materials: Sequence[MaterialStack],
    states: QuadPointState,
    psi: npt.ArrayLike,
    h_source: npt.ArrayLike | None = None,
    *,
    with_jacobian: bool = False,
) -> FieldEvaluation:
    """Run the material law at all barycenters, one batch per material.

    Raises:
        HysteresisError: Material failures, re-raised with the triangle index.
    """
    h = field_h(space, psi, h_source)
    nt = len(h)
    k_max = states.j_prev.shape[1]
    b = np.empty((nt, 2))
    j = np.zeros((nt, k_max, 2))
    wstar = np.empty(nt)
    diss = np.empty(nt)
    jac = np.empty((nt, 2, 2)) if with_jacobian else None
    for m, stack in enumerate(materials):
        rows = np.flatnonzero(states.material_ids == m)
        if rows.size == 0:
            continue
        jp = states.j_prev[rows, : stack.size]
        try:
            ev = evaluate_stack(stack, h[rows], jp, with_jacobian=with_jacobian)
        except HysteresisError:
            _raise_with_triangle(stack, h, states, rows)
            raise
        _scatter(ev, rows, stack.size, b, j, wstar, diss, jac)
    return FieldEvaluation(h=h, b=b, j=j, wstar=wstar, dissipation=diss, jacobian=jac)


def _scatter(
    ev: StackEvaluation,
    rows: IntArray,
    size: int,
    b: FloatArray,
    j: FloatArray,
    wstar: FloatArray,
    diss: FloatArray,
    jac: FloatArray | None,
) -> None:
    b[rows] = ev.b
    j[rows, :size] = ev.j
    wstar[rows] = ev.wstar
    diss[rows] = ev.dissipation
    if jac is not None and ev.jacobian is not None:
        jac[rows] = ev.jacobian


def _raise_with_triangle(
    stack: MaterialStack, h: FloatArray, states: QuadPointState, rows: IntArray
) -> None:
    for t in rows:
        try:
            evaluate_stack(stack, h[t][None], states.j_prev[t, : stack.size][None])
        except HysteresisError as exc:
            raise type(exc)(f"triangle {int(t)}: {exc}") from exc


def assemble_residual(
    space: P1Space,
    materials: Sequence[MaterialStack],
    states: QuadPointState,
    psi: npt.ArrayLike,
    h_source: npt.ArrayLike | None,
    loads: GateLoads,
) -> FloatArray:
    """R(v) = sum_T |T| B(H_s - grad psi; state_T) . grad v - l(v) over the free DOFs.

    R vanishes at the discrete solution and equals minus the gradient of the
    merit functional.
    """
    ev = evaluate_field(space, materials, states, psi, h_source)
    return space.weak_divergence(ev.b) - space.load_vector(loads)


def assemble_tangent(
    space: P1Space,
    materials: Sequence[MaterialStack],
    states: QuadPointState,
    psi: npt.ArrayLike,
    h_source: npt.ArrayLike | None = None,
) -> sp.csr_matrix:
    """Semi-smooth Newton tangent: blocks are the generalized Jacobians S_B at every barycenter."""
    ev = evaluate_field(space, materials, states, psi, h_source, with_jacobian=True)
    assert ev.jacobian is not None
    return space.block_operator(ev.jacobian)


def gate_fluxes(space: P1Space, b: npt.ArrayLike) -> dict[str, float]:
    """Discrete flux of B leaving the domain through each gate.

    Computed as the reaction sum_T |T| B . grad(v_i) of the gate indicator
    v_i (1 on gate i vertices, 0 elsewhere).
    """
    weighted = space.areas[:, None] * np.asarray(b, dtype=float)
    reaction = space.vertex_gradient.T @ weighted.ravel()
    out = {}
    for gate in GATES:
        verts = space.mesh.tagged_vertices(gate)
        if verts.size:
            out[gate.label] = float(reaction[verts].sum())
    return out


def probe(
    space: P1Space,
    materials: Sequence[MaterialStack],
    states: QuadPointState,
    psi: npt.ArrayLike,
    h_source: npt.ArrayLike | None,
    point: npt.ArrayLike,
) -> tuple[FloatArray, FloatArray]:
    """(H, B) in the triangle containing ``point``.

    Raises:
        OutsideDomainError: If no triangle contains the point.
    """
    pt = np.asarray(point, dtype=float)
    t = int(space.mesh.locate(pt[None])[0])
    if t < 0:
        raise OutsideDomainError(f"point ({pt[0]:g}, {pt[1]:g}) lies outside the mesh")
    h = -gradient_at_barycenter(space, psi, t)
    if h_source is not None:
        h = h + np.broadcast_to(np.asarray(h_source, dtype=float), (space.mesh.n_triangles, 2))[t]
    b = forward_b(materials[int(states.material_ids[t])], h, states.stack_state(t, materials))
    return h, b


# ---------------------------------------------------------------------------
# Sparse SPD solve
# ---------------------------------------------------------------------------


class Factorization:
    """Reusable factorization of a sparse SPD matrix.

    Uses CHOLMOD when scikit-sparse is installed, otherwise SuperLU in
    symmetric mode with diagonal pivoting; a non-positive pivot means the
    matrix is not SPD.
    """

    def __init__(self, matrix: sp.spmatrix, *, use_cholmod: bool | None = None) -> None:
        self.matrix = sp.csc_matrix(matrix, dtype=float)
        n, m = self.matrix.shape
        if n != m:
            raise NotSPDError(f"matrix must be square, got {self.matrix.shape}")
        if use_cholmod and not HAS_CHOLMOD:
            raise ValueError("use_cholmod requires scikit-sparse (pip install mcp-hysteresis[cholmod])")
        self.backend = "cholmod" if (HAS_CHOLMOD if use_cholmod is None else use_cholmod) else "splu"
        if self.backend == "cholmod":
            try:
                self._factor = cholesky(self.matrix)
            except CholmodNotPositiveDefiniteError as exc:
                raise NotSPDError(f"Cholesky factorization failed: {exc}") from exc
            self._solve = self._factor
        else:
            try:
                lu = splu(
                    self.matrix,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                )
            except RuntimeError as exc:
                raise NotSPDError(f"LU factorization failed: {exc}") from exc
            pivots = lu.U.diagonal()
            if np.any(~(pivots > 0)):
                raise NotSPDError("matrix is not symmetric positive definite (non-positive pivot)")
            self._solve = lu.solve
        _logger.debug("factorized %dx%d matrix with %s", n, n, self.backend)

    def solve(self, rhs: npt.ArrayLike) -> FloatArray:
        b = np.asarray(rhs, dtype=float)
        x = np.asarray(self._solve(b), dtype=float).reshape(b.shape)
        # one step of iterative refinement
        r = b - self.matrix @ x
        x = x + np.asarray(self._solve(r), dtype=float).reshape(b.shape)
        return x


def solve_spd(matrix: sp.spmatrix | npt.ArrayLike, rhs: npt.ArrayLike) -> FloatArray:
    """Solve A x = b for sparse SPD A.

    Raises:
        NotSPDError: If the factorization detects an indefinite or singular matrix.
    """
    mat = matrix if sp.issparse(matrix) else sp.csc_matrix(np.asarray(matrix, dtype=float))
    return Factorization(mat).solve(rhs)
