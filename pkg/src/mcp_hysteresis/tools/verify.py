"""Randomized property checks of the material law against a brute-force minimizer and its analytic bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from logging import getLogger
from typing import Any

import numpy as np
import numpy.typing as npt

from mcp_hysteresis.tools.material import (
    LOCAL_RTOL,
    HysteresisCell,
    MaterialStack,
    StackEvaluation,
    evaluate_stack,
    solve_cells,
)

_logger = getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

ORACLE_TOL = 1e-6  # absolute, in T
KKT_RTOL = 1e-10  # relative to (A + |H|)
SEMISMOOTH_FLOOR = 1e-9
GRADIENT_STEP = 1e-4  # central-difference step, relative to (1 + |H|)
GRADIENT_RTOL = 1e-6
_CHUNK = 128
_EPS = float(np.finfo(np.float64).eps)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def _polar_objective(
    cell: HysteresisCell, r: FloatArray, theta: FloatArray, h: FloatArray, jp: FloatArray
) -> FloatArray:
    """U(J) - <H, J> + chi |J - Jp| for J = r (cos theta, sin theta); h, jp broadcast as (n, 1, 1)."""
    jx = r * np.cos(theta)
    jy = r * np.sin(theta)
    k = cell.wavenumber
    energy = -(cell.slope_scale / k) * np.log(np.cos(k * r))
    value = energy - h[..., 0] * jx - h[..., 1] * jy
    if cell.chi > 0:
        value = value + cell.chi * np.hypot(jx - jp[..., 0], jy - jp[..., 1])
    return value


def brute_force_minimizer(
    cell: HysteresisCell,
    h: npt.ArrayLike,
    jp: npt.ArrayLike,
    *,
    coarse: tuple[int, int] = (64, 128),
    window: int = 8,
    zoom: float = 4.0,
    resolution: float = 1e-7,
) -> FloatArray:
    """Minimize the local objective on polar grids of |J| < Js.

    A coarse (radius x angle) grid is followed by zoom passes over
    (2 window + 1)^2 points around the best point; a pass whose best point
    lies on the window border recenters without shrinking.

    Args:
        cell: Pinning cell.
        h: Fields, shape (n, 2).
        jp: Previous polarizations, shape (n, 2).
        coarse: Radial and angular counts of the first grid.
        window: Half-width of the zoom window in grid steps.
        zoom: Step reduction per pass.
        resolution: Final grid step in T.

    Returns:
        Minimizers, shape (n, 2).
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    jp = np.atleast_2d(np.asarray(jp, dtype=float))
    if h.shape[1] != 2:
        raise ValueError(f"brute_force_minimizer works in the plane, got vectors of size {h.shape[1]}")
    out = np.empty_like(h)
    for lo in range(0, len(h), _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        out[sl] = _brute_chunk(cell, h[sl], jp[sl], coarse, window, zoom, resolution)
    return out


def _brute_chunk(
    cell: HysteresisCell,
    h: FloatArray,
    jp: FloatArray,
    coarse: tuple[int, int],
    window: int,
    zoom: float,
    resolution: float,
) -> FloatArray:
    n = len(h)
    r_max = (1.0 - 1e-12) * cell.j_sat
    nr, nt = coarse
    radii = np.linspace(0.0, r_max, nr)
    angles = np.linspace(0.0, 2 * math.pi, nt, endpoint=False)
    rr, tt = np.meshgrid(radii, angles, indexing="ij")
    values = _polar_objective(cell, rr[None], tt[None], h[:, None, None], jp[:, None, None])
    flat = values.reshape(n, -1).argmin(axis=1)
    ir, it = np.unravel_index(flat, rr.shape)
    r_c = radii[ir]
    t_c = angles[it]
    dr = np.full(n, radii[1] - radii[0])
    dt = np.full(n, angles[1] - angles[0])
    offsets = np.arange(-window, window + 1)
    active = np.ones(n, dtype=bool)
    for _ in range(400):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        r_grid = np.clip(r_c[idx, None, None] + dr[idx, None, None] * offsets[None, :, None], 0.0, r_max)
        t_grid = t_c[idx, None, None] + dt[idx, None, None] * offsets[None, None, :]
        r_grid, t_grid = np.broadcast_arrays(r_grid, t_grid)
        values = _polar_objective(cell, r_grid, t_grid, h[idx, None, None], jp[idx, None, None])
        best = values.reshape(len(idx), -1).argmin(axis=1)
        br, bt = np.unravel_index(best, (2 * window + 1, 2 * window + 1))
        r_c[idx] = r_grid[np.arange(len(idx)), br, bt]
        t_c[idx] = t_grid[np.arange(len(idx)), br, bt]
        at_edge_r = ((br == 0) & (r_c[idx] > 0)) | ((br == 2 * window) & (r_c[idx] < r_max))
        at_edge = at_edge_r | (((bt == 0) | (bt == 2 * window)) & (r_c[idx] > 0))
        shrink = ~at_edge
        dr[idx[shrink]] /= zoom
        dt[idx[shrink]] /= zoom
        fine = (dr[idx] <= resolution) & (dt[idx] * np.maximum(r_c[idx], cell.j_sat) <= resolution)
        active[idx[fine & shrink]] = False
    return np.stack([r_c * np.cos(t_c), r_c * np.sin(t_c)], axis=1)


# ---------------------------------------------------------------------------
# Property suite
# ---------------------------------------------------------------------------


@dataclass
class PropertyResult:
    name: str
    passed: bool
    samples: int
    violations: int
    worst_margin: float
    """Smallest (bound - observed) value; negative means violated"""
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "samples": self.samples,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "detail": self.detail,
        }


@dataclass
class PropertyReport:
    stack_name: str
    samples: int
    seed: int
    results: dict[str, PropertyResult] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def add(self, result: PropertyResult) -> None:
        self.results[result.name] = result
        log = _logger.info if result.passed else _logger.warning
        log(
            "%s: %s (%d samples, %d violations, worst margin %.3g)",
            result.name,
            "pass" if result.passed else "FAIL",
            result.samples,
            result.violations,
            result.worst_margin,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "material": self.stack_name,
            "samples": self.samples,
            "seed": self.seed,
            "passed": self.passed,
            "properties": {name: r.to_dict() for name, r in sorted(self.results.items())},
        }


def _margin_result(name: str, margins: FloatArray, detail: str = "") -> PropertyResult:
    margins = np.asarray(margins, dtype=float)
    violations = int(np.sum(~(margins >= 0)))
    worst = float(margins.min()) if margins.size else 0.0
    return PropertyResult(
        name=name,
        passed=violations == 0,
        samples=int(margins.size),
        violations=violations,
        worst_margin=worst,
        detail=detail,
    )


def _field_scale(stack: MaterialStack) -> float:
    if not stack.cells:
        return 100.0
    return max(c.a_strength + c.chi for c in stack.cells)


def _random_directions(rng: np.random.Generator, n: int) -> FloatArray:
    phi = rng.uniform(0.0, 2 * math.pi, n)
    return np.stack([np.cos(phi), np.sin(phi)], axis=1)


def _random_fields(rng: np.random.Generator, n: int, scale: float) -> FloatArray:
    # squared uniform radius puts more samples near the sticking threshold
    return (4.0 * scale * rng.uniform(0.0, 1.0, n) ** 2)[:, None] * _random_directions(rng, n)


def _random_memory(rng: np.random.Generator, n: int, stack: MaterialStack) -> FloatArray:
    jp = np.zeros((n, stack.size, 2))
    for k, cell in enumerate(stack.cells):
        radius = 0.95 * cell.j_sat * np.sqrt(rng.uniform(0.0, 1.0, n))
        jp[:, k] = radius[:, None] * _random_directions(rng, n)
    return jp


def _coenergy_gradient_margins(
    stack: MaterialStack, h: FloatArray, memory: FloatArray, ev: StackEvaluation
) -> tuple[FloatArray, int]:
    """Central differences of w* at step GRADIENT_STEP (1 + |H|) against B.

    Samples whose stencil changes the branch of some cell are skipped, since
    B has a kink there. Returns the margins of the kept samples and the
    number skipped.
    """
    step = GRADIENT_STEP * (1.0 + np.linalg.norm(h, axis=1))
    fd = np.empty_like(h)
    same_branch = np.ones(len(h), dtype=bool)
    for axis in range(h.shape[1]):
        shift = np.zeros_like(h)
        shift[:, axis] = step
        plus = evaluate_stack(stack, h + shift, memory)
        minus = evaluate_stack(stack, h - shift, memory)
        fd[:, axis] = (plus.wstar - minus.wstar) / (2 * step)
        same_branch &= np.all(plus.branch == ev.branch, axis=1)
        same_branch &= np.all(minus.branch == ev.branch, axis=1)
    b_norm = np.linalg.norm(ev.b, axis=1)
    h_norm = np.linalg.norm(h, axis=1)
    # relative bound, floored at mu0 (1 + |H|) for B near zero, plus the rounding
    # of the quotient and the accuracy of the local solves behind B
    rounding = 64 * _EPS * (1.0 + np.abs(ev.wstar)) / step
    solve_err = sum(4 * LOCAL_RTOL * (c.a_strength + h_norm) / c.sigma for c in stack.cells)
    tol = GRADIENT_RTOL * np.maximum(b_norm, stack.mu0 * (1.0 + h_norm)) + rounding + solve_err
    margins = tol - np.linalg.norm(fd - ev.b, axis=1)
    return margins[same_branch], int((~same_branch).sum())


def run_property_suite(
    stack: MaterialStack,
    samples: int = 10_000,
    seed: int = 42,
    *,
    jacobian_scale: float = 1.0,
    semismooth_samples: int = 1000,
    oracle_tol: float = ORACLE_TOL,
) -> PropertyReport:
    """Check the material law of ``stack`` on seeded random samples.

    Properties: oracle agreement and KKT residual of the local update,
    strong monotonicity and Lipschitz continuity of B(H), per-cell
    non-expansiveness, w* gradient consistency, S_B eigenvalue bounds and
    semi-smoothness of S_B.

    Args:
        stack: Material under test.
        samples: Number of random samples per property.
        seed: Seed of the random generator.
        jacobian_scale: Multiplies S_B in the semi-smoothness check (fault injection).
        semismooth_samples: Number of moving points used for semi-smoothness.
        oracle_tol: Absolute tolerance of the oracle comparison in T.

    Returns:
        PropertyReport with one PropertyResult per property.
    """
    if samples < 1:
        raise ValueError(f"samples must be positive, got {samples}")
    rng = np.random.default_rng(seed)
    report = PropertyReport(stack_name=stack.name, samples=samples, seed=seed)
    scale = _field_scale(stack)
    lip = stack.lipschitz
    mu0 = stack.mu0

    # --- single cells: oracle, KKT, non-expansiveness
    oracle_margins: list[FloatArray] = []
    kkt_margins: list[FloatArray] = []
    nonexp_margins: list[FloatArray] = []
    branch_counts = np.zeros(3, dtype=int)
    if stack.size:
        which = rng.integers(0, stack.size, samples)
        h = _random_fields(rng, samples, scale)
        h2 = h + _random_fields(rng, samples, scale / 4)
        jp = np.empty((samples, 2))
        for k, cell in enumerate(stack.cells):
            rows = which == k
            radius = 0.95 * cell.j_sat * np.sqrt(rng.uniform(0.0, 1.0, rows.sum()))
            jp[rows] = radius[:, None] * _random_directions(rng, int(rows.sum()))
        for k, cell in enumerate(stack.cells):
            rows = np.flatnonzero(which == k)
            if rows.size == 0:
                continue
            batch = solve_cells(cell, h[rows], jp[rows])
            branch_counts += np.bincount(batch.branch, minlength=3)
            oracle = brute_force_minimizer(cell, h[rows], jp[rows])
            oracle_margins.append(oracle_tol - np.linalg.norm(batch.j - oracle, axis=1))
            kkt_margins.append(
                KKT_RTOL * (cell.a_strength + np.linalg.norm(h[rows], axis=1)) - batch.kkt
            )
            other = solve_cells(cell, h2[rows], jp[rows])
            dh = np.linalg.norm(h2[rows] - h[rows], axis=1)
            slack = 4 * LOCAL_RTOL * (cell.a_strength + np.linalg.norm(h2[rows], axis=1)) / cell.sigma
            nonexp_margins.append(
                dh / cell.sigma + slack - np.linalg.norm(other.j - batch.j, axis=1)
            )
    branches = f"sticking={branch_counts[0]} sliding={branch_counts[1]} smooth={branch_counts[2]}"
    report.add(_margin_result("oracle", _cat(oracle_margins), branches))
    report.add(_margin_result("kkt", _cat(kkt_margins)))
    report.add(_margin_result("nonexpansive", _cat(nonexp_margins)))

    # --- stack: monotonicity, Lipschitz, w* gradient, Jacobian bounds
    h1 = _random_fields(rng, samples, scale)
    h2 = h1 + _random_fields(rng, samples, scale / 4)
    memory = _random_memory(rng, samples, stack)
    ev1 = evaluate_stack(stack, h1, memory, with_jacobian=True)
    ev2 = evaluate_stack(stack, h2, memory)
    dh = h1 - h2
    db = ev1.b - ev2.b
    dh2 = np.einsum("ij,ij->i", dh, dh)
    hmax = np.maximum(np.linalg.norm(h1, axis=1), np.linalg.norm(h2, axis=1))
    # local solves are accurate to LOCAL_RTOL (A + |H|) / sigma per cell
    solve_err = sum(
        4 * LOCAL_RTOL * (c.a_strength + hmax) / c.sigma for c in stack.cells
    ) + 1e-15 * (1.0 + np.linalg.norm(ev1.b, axis=1))
    report.add(
        _margin_result(
            "monotone",
            np.einsum("ij,ij->i", db, dh) - mu0 * dh2 + solve_err * np.sqrt(dh2) + 1e-12 * mu0 * dh2,
        )
    )
    report.add(
        _margin_result("lipschitz", lip * np.sqrt(dh2) + solve_err - np.linalg.norm(db, axis=1))
    )

    grad_margins, grad_skipped = _coenergy_gradient_margins(stack, h1, memory, ev1)
    report.add(
        _margin_result(
            "coenergy_gradient", grad_margins, f"{grad_skipped} samples straddle a branch switch"
        )
    )

    assert ev1.jacobian is not None
    sym = 0.5 * (ev1.jacobian + np.transpose(ev1.jacobian, (0, 2, 1)))
    eig = np.linalg.eigvalsh(sym)
    asym = np.abs(ev1.jacobian - np.transpose(ev1.jacobian, (0, 2, 1))).max(axis=(1, 2))
    bound_tol = 1e-9 * lip
    report.add(
        _margin_result(
            "jacobian_bounds",
            np.minimum.reduce(
                [eig[:, 0] - mu0 + bound_tol, lip + bound_tol - eig[:, 1], bound_tol - asym]
            ),
        )
    )

    # --- semi-smoothness at moving points
    moving = np.linalg.norm(ev1.j - memory, axis=2).max(axis=1) > 1e-6 if stack.size else np.zeros(samples, bool)
    rows = np.flatnonzero(moving)[:semismooth_samples]
    ratios = []
    if rows.size:
        h0 = h1[rows]
        mem = memory[rows]
        b0 = ev1.b[rows]
        direction = _random_directions(rng, rows.size)
        base = 1.0 + np.linalg.norm(h0, axis=1)
        for factor in (1e-3, 1e-5):
            delta = (factor * base)[:, None] * direction
            ev = evaluate_stack(stack, h0 + delta, mem, with_jacobian=True)
            assert ev.jacobian is not None
            pred = jacobian_scale * np.einsum("nij,nj->ni", ev.jacobian, delta)
            ratios.append(
                np.linalg.norm(ev.b - b0 - pred, axis=1) / np.linalg.norm(delta, axis=1)
            )
        large, small = ratios
        margins = np.maximum(large / 10.0, SEMISMOOTH_FLOOR) - small
    else:
        margins = np.zeros(0)
    report.add(_margin_result("semismooth", margins, f"{rows.size} moving points"))
    return report


def _cat(parts: list[FloatArray]) -> FloatArray:
    return np.concatenate(parts) if parts else np.zeros(0)
