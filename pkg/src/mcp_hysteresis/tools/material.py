"""Energy-based vector hysteresis law: local polarization update, B(H), w*(H) and S_B."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from logging import getLogger
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from mcp_hysteresis.tools.errors import ConvergenceError, DomainError, HysteresisError

_logger = getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MU0 = 4e-7 * math.pi  # vacuum permeability [H/m]

LOCAL_RTOL = 1e-12  # local KKT tolerance, relative to (A + |H|)
MAX_LOCAL_ITERS = 100
DOMAIN_MARGIN = 1e-12  # Newton trial points stay inside |J| <= (1 - margin) * Js
_MAX_HALVINGS = 60
_POLISH = 1e-3  # Newton continues below LOCAL_RTOL until it stagnates
_EPS = float(np.finfo(np.float64).eps)

# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


class Branch(IntEnum):
    STICKING = 0
    SLIDING = 1
    SMOOTH = 2


@dataclass(frozen=True)
class HysteresisCell:
    """One pinning element with log-cos internal energy.

    U(J) = -(c*A*Js/pi) * log(cos(pi*|J| / (2*Js)))
    """

    a_strength: float
    """Field strength scale A [A/m]"""
    j_sat: float
    """Saturation polarization Js [T]"""
    chi: float = 0.0
    """Pinning force [A/m]"""
    energy_prefactor: int = 2
    """Dimensionless c in {1, 2}"""

    def __post_init__(self) -> None:
        if not (self.a_strength > 0 and math.isfinite(self.a_strength)):
            raise ValueError(f"a_strength must be positive, got {self.a_strength}")
        if not (self.j_sat > 0 and math.isfinite(self.j_sat)):
            raise ValueError(f"j_sat must be positive, got {self.j_sat}")
        if not (self.chi >= 0 and math.isfinite(self.chi)):
            raise ValueError(f"chi must be non-negative, got {self.chi}")
        if self.energy_prefactor not in (1, 2):
            raise ValueError(f"energy_prefactor must be 1 or 2, got {self.energy_prefactor}")

    @property
    def wavenumber(self) -> float:
        """k = pi / (2*Js)."""
        return math.pi / (2.0 * self.j_sat)

    @property
    def slope_scale(self) -> float:
        """u'(r) = slope_scale * tan(k*r)."""
        return 0.5 * self.energy_prefactor * self.a_strength

    @property
    def sigma(self) -> float:
        """Strong convexity constant of U, i.e. u''(0) = c*pi*A / (4*Js)."""
        return self.slope_scale * self.wavenumber


@dataclass(frozen=True)
class MaterialStack:
    cells: tuple[HysteresisCell, ...]
    mu0: float = MU0
    name: str = "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", tuple(self.cells))
        if self.mu0 <= 0:
            raise ValueError(f"mu0 must be positive, got {self.mu0}")

    @property
    def size(self) -> int:
        return len(self.cells)

    @property
    def lipschitz(self) -> float:
        """Upper bound mu0 + sum 1/sigma_k of the slope of B(H)."""
        return self.mu0 + sum(1.0 / c.sigma for c in self.cells)

    @property
    def saturation(self) -> float:
        return sum(c.j_sat for c in self.cells)

    @classmethod
    def from_records(cls, records: list[dict[str, Any]], *, name: str = "custom") -> MaterialStack:
        """Build a stack from dicts with keys a_strength, j_sat, chi, energy_prefactor."""
        cells = []
        for i, rec in enumerate(records):
            unknown = set(rec) - {"a_strength", "j_sat", "chi", "energy_prefactor"}
            if unknown:
                raise ValueError(f"cell {i}: unknown keys {sorted(unknown)}")
            try:
                cells.append(HysteresisCell(**rec))
            except TypeError as exc:
                raise ValueError(f"cell {i}: {exc}") from exc
            except ValueError as exc:
                raise ValueError(f"cell {i}: {exc}") from exc
        return cls(cells=tuple(cells), name=name)


@dataclass(frozen=True)
class StackState:
    """Previous partial polarizations J_{k,p} of one material point, shape (K, d)."""

    j_prev: FloatArray

    def __post_init__(self) -> None:
        arr = np.array(self.j_prev, dtype=float)
        if arr.ndim != 2 or arr.shape[1] not in (2, 3):
            raise ValueError(f"j_prev must have shape (K, 2) or (K, 3), got {arr.shape}")
        object.__setattr__(self, "j_prev", arr)

    @classmethod
    def virgin(cls, stack: MaterialStack, dim: int = 2) -> StackState:
        return cls(np.zeros((stack.size, dim)))

    def validate(self, stack: MaterialStack) -> None:
        if self.j_prev.shape[0] != stack.size:
            raise ValueError(
                f"state holds {self.j_prev.shape[0]} polarizations, stack has {stack.size} cells"
            )
        for k, cell in enumerate(stack.cells):
            _check_domain(cell, self.j_prev[k], what=f"j_prev[{k}]")


@dataclass(frozen=True)
class CellSolveResult:
    j_new: FloatArray
    lam: float
    branch: Branch
    kkt_norm: float


@dataclass(frozen=True)
class CellBatch:
    """Vectorised CellSolveResult over n points."""

    j: FloatArray  # (n, d)
    lam: FloatArray  # (n,)
    branch: npt.NDArray[np.int8]  # (n,)
    kkt: FloatArray  # (n,)

    def __getitem__(self, i: int) -> CellSolveResult:
        return CellSolveResult(
            j_new=self.j[i].copy(),
            lam=float(self.lam[i]),
            branch=Branch(int(self.branch[i])),
            kkt_norm=float(self.kkt[i]),
        )


@dataclass(frozen=True)
class StackEvaluation:
    """Material response of a stack at n points."""

    b: FloatArray  # (n, d)
    j: FloatArray  # (n, K, d)
    branch: npt.NDArray[np.int8]  # (n, K)
    wstar: FloatArray  # (n,) co-energy density
    dissipation: FloatArray  # (n,) sum_k chi_k |J_k - J_kp|
    kkt: FloatArray  # (n, K)
    jacobian: FloatArray | None = field(default=None)  # (n, d, d)


# ---------------------------------------------------------------------------
# Internal energy
# ---------------------------------------------------------------------------


def _norms(v: FloatArray) -> FloatArray:
    return np.sqrt(np.einsum("...i,...i->...", v, v))


def _check_domain(cell: HysteresisCell, j: npt.ArrayLike, *, what: str = "j") -> None:
    r = _norms(np.asarray(j, dtype=float))
    if np.any(~np.isfinite(r)) or np.any(r >= cell.j_sat):
        worst = float(np.max(r))
        raise DomainError(f"|{what}| = {worst:.6g} outside energy domain |J| < Js = {cell.j_sat}")


def _energy_radial(cell: HysteresisCell, r: FloatArray) -> FloatArray:
    k = cell.wavenumber
    return -(cell.slope_scale / k) * np.log(np.cos(k * r))


def _slope_over_r(cell: HysteresisCell, r: FloatArray) -> FloatArray:
    """u'(r)/r with the isotropic limit sigma at r = 0."""
    k = cell.wavenumber
    out = np.full_like(r, cell.sigma)
    nz = r > 1e-8 * cell.j_sat
    out[nz] = cell.slope_scale * np.tan(k * r[nz]) / r[nz]
    # second order expansion tan(x)/x = 1 + x^2/3 near zero
    small = ~nz
    out[small] = cell.sigma * (1.0 + (k * r[small]) ** 2 / 3.0)
    return out


def _curvature(cell: HysteresisCell, r: FloatArray) -> FloatArray:
    """u''(r)."""
    k = cell.wavenumber
    return cell.sigma / np.cos(k * r) ** 2


def internal_energy(cell: HysteresisCell, j: npt.ArrayLike) -> float | FloatArray:
    """Internal energy density U(J) [J/m^3].

    Args:
        cell: Pinning cell.
        j: Polarization vector (d,) or batch (n, d).

    Returns:
        U(j) as float for a single vector, array for a batch.

    Raises:
        DomainError: If |j| >= Js.
    """
    arr = np.asarray(j, dtype=float)
    _check_domain(cell, arr)
    u = _energy_radial(cell, _norms(arr))
    return float(u) if arr.ndim == 1 else u


def _grad(cell: HysteresisCell, j: FloatArray) -> FloatArray:
    return _slope_over_r(cell, _norms(j))[..., None] * j


def _hess(cell: HysteresisCell, j: FloatArray) -> FloatArray:
    r = _norms(j)
    d = j.shape[-1]
    eye = np.eye(d)
    tangential = _slope_over_r(cell, r)
    radial = _curvature(cell, r)
    safe = np.where(r > 0, r, 1.0)
    e = j / safe[..., None]
    ee = e[..., :, None] * e[..., None, :]
    return radial[..., None, None] * ee + tangential[..., None, None] * (eye - ee)


def grad_u(cell: HysteresisCell, j: npt.ArrayLike) -> FloatArray:
    """Gradient of U: u'(r) * j/|j|, zero at the origin."""
    arr = np.asarray(j, dtype=float)
    _check_domain(cell, arr)
    return _grad(cell, arr)


def hess_u(cell: HysteresisCell, j: npt.ArrayLike) -> FloatArray:
    """Hessian of U: u''(r) e(x)e + (u'(r)/r)(I - e(x)e); sigma*I at the origin."""
    arr = np.asarray(j, dtype=float)
    _check_domain(cell, arr)
    return _hess(cell, arr)


def anhysteretic_polarization(cell: HysteresisCell, h: npt.ArrayLike) -> FloatArray:
    """Closed-form minimizer for chi = 0: |J| = (2Js/pi) * arctan(|H| / (c*A/2)) along H."""
    arr = np.asarray(h, dtype=float)
    hn = _norms(arr)
    r = np.arctan(hn / cell.slope_scale) / cell.wavenumber
    # keep strictly inside the domain for huge fields
    r = np.minimum(r, (1.0 - DOMAIN_MARGIN) * cell.j_sat)
    scale = np.divide(r, hn, out=np.zeros_like(hn), where=hn > 0)
    return scale[..., None] * arr


# ---------------------------------------------------------------------------
# Local update
# ---------------------------------------------------------------------------


def _objective(cell: HysteresisCell, j: FloatArray, h: FloatArray, jp: FloatArray) -> FloatArray:
    return (
        _energy_radial(cell, _norms(j))
        - np.einsum("ij,ij->i", h, j)
        + cell.chi * _norms(j - jp)
    )


def _backtrack(
    cell: HysteresisCell, h: FloatArray, jp: FloatArray, j: FloatArray, step: FloatArray
) -> FloatArray:
    """Step halving that keeps trial points inside the domain and not uphill."""
    r_cap = (1.0 - DOMAIN_MARGIN) * cell.j_sat
    f0 = _objective(cell, j, h, jp)
    slack = 64 * _EPS * (np.abs(f0) + _norms(h) * cell.j_sat + cell.a_strength * cell.j_sat)
    t = np.ones(len(j))
    trial = j - step
    pending = np.ones(len(j), dtype=bool)
    for _ in range(_MAX_HALVINGS):
        idx = np.flatnonzero(pending)
        inside = _norms(trial[idx]) <= r_cap
        ok = np.zeros(len(idx), dtype=bool)
        if inside.any():
            sub = idx[inside]
            fv = _objective(cell, trial[sub], h[sub], jp[sub])
            ok[inside] = fv <= f0[sub] + slack[sub]
        pending[idx[ok]] = False
        if not pending.any():
            return trial
        bad = np.flatnonzero(pending)
        t[bad] *= 0.5
        trial[bad] = j[bad] - t[bad, None] * step[bad]
    trial[pending] = j[pending]
    return trial


def _slide(
    cell: HysteresisCell,
    h: FloatArray,
    jp: FloatArray,
    direction: FloatArray,
    max_local_iters: int,
) -> FloatArray:
    """Guarded Newton on grad U(J) - H + chi (J - Jp)/|J - Jp| = 0."""
    chi = cell.chi
    d = h.shape[1]
    eye = np.eye(d)
    # exact for collinear data, J0 != Jp whenever sticking is excluded
    j = anhysteretic_polarization(cell, h - chi * direction)
    accept = LOCAL_RTOL * (cell.a_strength + _norms(h))
    tol = _POLISH * accept
    stall = 4 * _EPS * cell.j_sat
    done = np.zeros(len(h), dtype=bool)
    previous = np.full(len(h), np.inf)
    for _ in range(max_local_iters):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            return j
        jj = j[idx]
        delta = jj - jp[idx]
        rho = np.maximum(_norms(delta), 1e-300)
        e = delta / rho[:, None]
        residual = _grad(cell, jj) - h[idx] + chi * e
        rnorm = _norms(residual)
        # below the acceptance level, stop once Newton no longer halves the residual
        converged = (rnorm <= tol[idx]) | ((rnorm <= accept[idx]) & (rnorm > 0.5 * previous[idx]))
        previous[idx] = rnorm
        done[idx[converged]] = True
        work = ~converged
        if not work.any():
            return j
        idx, jj, e, rho, residual = idx[work], jj[work], e[work], rho[work], residual[work]
        rnorm = rnorm[work]
        ee = e[:, :, None] * e[:, None, :]
        jac = _hess(cell, jj) + (chi / rho)[:, None, None] * (eye - ee)
        step = np.linalg.solve(jac, residual[..., None])[..., 0]
        j_new = _backtrack(cell, h[idx], jp[idx], jj, step)
        stalled = _norms(j_new - jj) <= stall
        # a Newton step below the resolution of J counts as converged
        stuck = stalled & (rnorm > accept[idx]) & (_norms(step) > stall)
        if stuck.any():
            raise ConvergenceError(
                f"local solve stalled for {int(stuck.sum())} point(s) "
                f"at KKT residual {float(rnorm[stuck].max()):.3g}"
            )
        j[idx] = j_new
        done[idx[stalled]] = True
    if not done.all():
        raise ConvergenceError(
            f"local solve did not converge for {int((~done).sum())} point(s) "
            f"within {max_local_iters} iterations"
        )
    return j


def ncp_phi(x1: npt.ArrayLike, x2: npt.ArrayLike) -> float | FloatArray:
    """Complementarity function max(0, x1 + x2) - x2; zero iff x1 <= 0, x2 >= 0, x1*x2 = 0."""
    out = np.maximum(0.0, np.add(x1, x2)) - np.asarray(x2, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


def _kkt_batch(
    cell: HysteresisCell, j: FloatArray, lam: FloatArray, h: FloatArray, jp: FloatArray
) -> FloatArray:
    g = _grad(cell, j) - h
    if cell.chi == 0:
        return _norms(g)
    block1 = j - jp + lam[:, None] * g
    x1 = 0.5 * (np.einsum("ij,ij->i", g, g) - cell.chi**2)
    block2 = np.maximum(0.0, x1 + lam) - lam
    return np.sqrt(np.einsum("ij,ij->i", block1, block1) + block2**2)


def solve_cells(
    cell: HysteresisCell,
    h: npt.ArrayLike,
    jp: npt.ArrayLike,
    *,
    max_local_iters: int = MAX_LOCAL_ITERS,
) -> CellBatch:
    """Minimize U(J) - <H, J> + chi |J - Jp| at n points.

    Sticking is tested first (|grad U(Jp) - H| <= chi, ties stick); the
    remaining points slide and are solved by guarded Newton; chi = 0 uses
    the closed-form anhysteretic inverse.

    Args:
        cell: Pinning cell.
        h: Fields, shape (n, d).
        jp: Previous polarizations, shape (n, d).
        max_local_iters: Newton iteration cap.

    Returns:
        CellBatch with minimizers, multipliers, branches and KKT residuals.

    Raises:
        DomainError: If some |jp| >= Js.
        ConvergenceError: If the Newton iteration exceeds its cap or stalls
            above the KKT tolerance.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    jp = np.atleast_2d(np.asarray(jp, dtype=float))
    h, jp = np.broadcast_arrays(h, jp)
    h = np.ascontiguousarray(h)
    _check_domain(cell, jp, what="jp")
    n = h.shape[0]
    j = jp.copy()
    lam = np.zeros(n)
    branch = np.full(n, Branch.STICKING, dtype=np.int8)

    if cell.chi == 0:
        j = anhysteretic_polarization(cell, h)
        branch[:] = Branch.SMOOTH
    else:
        trial = h - _grad(cell, jp)
        tnorm = _norms(trial)
        sliding = tnorm > cell.chi
        if sliding.any():
            direction = trial[sliding] / tnorm[sliding, None]
            js = _slide(cell, h[sliding], jp[sliding], direction, max_local_iters)
            j[sliding] = js
            lam[sliding] = _norms(js - jp[sliding]) / cell.chi
            branch[sliding] = Branch.SLIDING
    return CellBatch(j=j, lam=lam, branch=branch, kkt=_kkt_batch(cell, j, lam, h, jp))


def update_cell(
    cell: HysteresisCell,
    h: npt.ArrayLike,
    jp: npt.ArrayLike,
    *,
    max_local_iters: int = MAX_LOCAL_ITERS,
) -> CellSolveResult:
    """Local polarization update of one cell at one material point."""
    h = np.asarray(h, dtype=float)
    jp = np.asarray(jp, dtype=float)
    if h.ndim != 1 or h.shape != jp.shape or h.shape[0] not in (2, 3):
        raise ValueError(f"h and jp must be matching 2- or 3-vectors, got {h.shape} and {jp.shape}")
    return solve_cells(cell, h[None], jp[None], max_local_iters=max_local_iters)[0]


def kkt_residual(
    cell: HysteresisCell,
    j: npt.ArrayLike,
    lam: float,
    h: npt.ArrayLike,
    jp: npt.ArrayLike,
) -> float:
    """Euclidean norm of T((J, lambda); H); for chi = 0 the stationarity residual |grad U - H|."""
    j = np.asarray(j, dtype=float)
    _check_domain(cell, j)
    if lam < 0:
        raise ValueError(f"lam must be non-negative, got {lam}")
    res = _kkt_batch(
        cell,
        j[None],
        np.array([float(lam)]),
        np.asarray(h, dtype=float)[None],
        np.asarray(jp, dtype=float)[None],
    )
    return float(res[0])


# ---------------------------------------------------------------------------
# Stack response
# ---------------------------------------------------------------------------


def cell_jacobian(cell: HysteresisCell, batch: CellBatch, jp: FloatArray) -> FloatArray:
    """Generalized Jacobian S_J of one cell: 0 when sticking, inverse of the regularised Hessian otherwise."""
    n, d = batch.j.shape
    out = np.zeros((n, d, d))
    moving = batch.branch != Branch.STICKING
    if not moving.any():
        return out
    j = batch.j[moving]
    mat = _hess(cell, j)
    if cell.chi > 0:
        delta = j - jp[moving]
        rho = _norms(delta)
        e = delta / rho[:, None]
        ee = e[:, :, None] * e[:, None, :]
        mat = mat + (cell.chi / rho)[:, None, None] * (np.eye(d) - ee)
    out[moving] = np.linalg.inv(mat)
    return out


def evaluate_stack(
    stack: MaterialStack,
    h: npt.ArrayLike,
    j_prev: npt.ArrayLike,
    *,
    with_jacobian: bool = False,
) -> StackEvaluation:
    """Evaluate B, all J_k, w* and optionally S_B at n points sharing one stack.

    Args:
        stack: Material stack (K cells; K = 0 is the linear vacuum law).
        h: Fields, shape (n, d).
        j_prev: Previous partial polarizations, shape (n, K, d).
        with_jacobian: Also compute S_B = mu0 I + sum_k S_Jk.

    Raises:
        HysteresisError: Cell errors, prefixed with the cell index.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    n, d = h.shape
    j_prev = np.asarray(j_prev, dtype=float).reshape(n, stack.size, d)
    b = stack.mu0 * h
    hh = np.einsum("ij,ij->i", h, h)
    wstar = 0.5 * stack.mu0 * hh
    dissipation = np.zeros(n)
    j_all = np.zeros((n, stack.size, d))
    branch = np.zeros((n, stack.size), dtype=np.int8)
    kkt = np.zeros((n, stack.size))
    jac = stack.mu0 * np.broadcast_to(np.eye(d), (n, d, d)).copy() if with_jacobian else None
    for k, cell in enumerate(stack.cells):
        jp = j_prev[:, k]
        try:
            batch = solve_cells(cell, h, jp)
        except HysteresisError as exc:
            raise type(exc)(f"cell {k}: {exc}") from exc
        j_all[:, k] = batch.j
        branch[:, k] = batch.branch
        kkt[:, k] = batch.kkt
        b += batch.j
        moved = cell.chi * _norms(batch.j - jp)
        wstar -= _energy_radial(cell, _norms(batch.j)) - np.einsum("ij,ij->i", h, batch.j) + moved
        dissipation += moved
        if jac is not None:
            jac += cell_jacobian(cell, batch, jp)
    return StackEvaluation(
        b=b, j=j_all, branch=branch, wstar=wstar, dissipation=dissipation, kkt=kkt, jacobian=jac
    )


def update_stack(
    stack: MaterialStack, h: npt.ArrayLike, state: StackState
) -> tuple[list[CellSolveResult], FloatArray]:
    """Solve every cell of the stack at one point; returns the cell results and B."""
    state.validate(stack)
    h = np.asarray(h, dtype=float)
    results: list[CellSolveResult] = []
    b = stack.mu0 * h
    for k, cell in enumerate(stack.cells):
        try:
            res = update_cell(cell, h, state.j_prev[k])
        except HysteresisError as exc:
            raise type(exc)(f"cell {k}: {exc}") from exc
        results.append(res)
        b = b + res.j_new
    return results, b


def forward_b(stack: MaterialStack, h: npt.ArrayLike, state: StackState) -> FloatArray:
    """B(H; Jp) = mu0 H + sum_k J_k."""
    return update_stack(stack, h, state)[1]


def coenergy_density(stack: MaterialStack, h: npt.ArrayLike, state: StackState) -> float:
    """w*(H) = mu0/2 |H|^2 - sum_k min_J {U_k(J) - <H, J> + chi_k |J - J_kp|}."""
    state.validate(stack)
    h = np.asarray(h, dtype=float)
    ev = evaluate_stack(stack, h[None], state.j_prev[None])
    return float(ev.wstar[0])


def generalized_jacobian(
    stack: MaterialStack,
    h: npt.ArrayLike,
    state: StackState,
    results: list[CellSolveResult] | None = None,
) -> FloatArray:
    """Element S_B of the generalized Jacobian of B at H.

    Pass the ``results`` of :func:`update_stack` at the same H to skip the
    local solves; otherwise they are recomputed.
    """
    state.validate(stack)
    h = np.asarray(h, dtype=float)
    if results is None:
        results, _ = update_stack(stack, h, state)
    if len(results) != stack.size:
        raise ValueError(f"expected {stack.size} cell results, got {len(results)}")
    d = h.shape[0]
    s_b = stack.mu0 * np.eye(d)
    for k, (cell, res) in enumerate(zip(stack.cells, results)):
        batch = CellBatch(
            j=res.j_new[None],
            lam=np.array([res.lam]),
            branch=np.array([res.branch], dtype=np.int8),
            kkt=np.array([res.kkt_norm]),
        )
        s_b += cell_jacobian(cell, batch, state.j_prev[k][None])[0]
    return s_b


def dissipation(stack: MaterialStack, j_new: npt.ArrayLike, j_prev: npt.ArrayLike) -> FloatArray:
    """sum_k chi_k |J_k - J_kp| for arrays of shape (..., K, d)."""
    delta = _norms(np.asarray(j_new, dtype=float) - np.asarray(j_prev, dtype=float))
    chis = np.array([c.chi for c in stack.cells])
    return np.sum(delta * chis, axis=-1)


# ---------------------------------------------------------------------------
# Presets (loaded once from JSON)
# ---------------------------------------------------------------------------

_PRESETS: dict[str, dict] | None = None


def _load_presets() -> dict[str, dict]:
    """Load the material preset table from JSON (cached)."""
    global _PRESETS
    if _PRESETS is None:
        path = Path(__file__).resolve().parent.parent / "data" / "material_presets.json"
        with open(path, encoding="utf-8") as f:
            _PRESETS = json.load(f)
    return _PRESETS


def list_presets() -> list[str]:
    return sorted(_load_presets())


def preset_table() -> dict[str, dict]:
    """Copy of the preset table, keyed by preset name."""
    return copy.deepcopy(_load_presets())


def material_preset(name: str) -> MaterialStack:
    """Look up a named material stack (e.g. ``lavet5``).

    Raises:
        ValueError: If the preset is unknown.
    """
    presets = _load_presets()
    key = name.strip().lower()
    if key not in presets:
        raise ValueError(f"Unknown material preset: {name!r}. Choose from: {', '.join(sorted(presets))}")
    return MaterialStack.from_records(presets[key]["cells"], name=key)
