"""Outer solvers for one load step: semi-smooth Newton and three comparison tangents with Armijo backtracking."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from logging import getLogger
from typing import Any, ClassVar, Sequence

import numpy as np
import numpy.typing as npt

from mcp_hysteresis.tools.errors import LineSearchError, MaxItersError, NotSPDError
from mcp_hysteresis.tools.fem import (
    Factorization,
    FieldEvaluation,
    GateLoads,
    P1Space,
    QuadPointState,
    energy_norm,
    evaluate_field,
)
from mcp_hysteresis.tools.material import MU0, MaterialStack

_logger = getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

_EPS = float(np.finfo(np.float64).eps)


class Strategy(str, Enum):
    SSN = "ssn"  # semi-smooth Newton
    LQN = "lqn"  # local quasi-Newton (per-triangle BFGS)
    LCM = "lcm"  # local constant slopes from difference quotients
    GCM = "gcm"  # global constant permeability

    @classmethod
    def from_name(cls, name: str | Strategy) -> Strategy:
        if isinstance(name, Strategy):
            return name
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(
                f"Unknown strategy: {name!r}. Choose from: {', '.join(s.value for s in cls)}"
            ) from None


@dataclass(frozen=True)
class SolverConfig:
    strategy: Strategy = Strategy.SSN
    armijo_rho: float = 0.5
    armijo_sigma: float = 0.1
    term_rel_tol: float = 1e-8
    max_iters: int = 500
    gcm_mu_r: float = 1000.0
    lcm_fd_step: float = 1.0
    max_backtracks: int = 60

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", Strategy.from_name(self.strategy))
        if not 0 < self.armijo_rho < 1:
            raise ValueError(f"armijo_rho must lie in (0, 1), got {self.armijo_rho}")
        if not 0 < self.armijo_sigma < 0.5:
            raise ValueError(f"armijo_sigma must lie in (0, 0.5), got {self.armijo_sigma}")
        if not self.term_rel_tol > 0:
            raise ValueError(f"term_rel_tol must be positive, got {self.term_rel_tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if not self.gcm_mu_r > 0:
            raise ValueError(f"gcm_mu_r must be positive, got {self.gcm_mu_r}")
        if not self.lcm_fd_step > 0:
            raise ValueError(f"lcm_fd_step must be positive, got {self.lcm_fd_step}")
        if self.max_backtracks < 0:
            raise ValueError(f"max_backtracks must be non-negative, got {self.max_backtracks}")


@dataclass
class SolveReport:
    strategy: Strategy
    iterations: int = 0
    step_sizes: list[float] = field(default_factory=list)
    merit_history: list[float] = field(default_factory=list)
    residual_norms: list[float] = field(default_factory=list)
    direction_norms: list[float] = field(default_factory=list)
    factorizations: int = 0
    wall_time: float = 0.0
    converged: bool = False

    @property
    def final_merit(self) -> float:
        return self.merit_history[-1] if self.merit_history else float("nan")

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy.value,
            "iterations": self.iterations,
            "converged": self.converged,
            "factorizations": self.factorizations,
            "wall_time": self.wall_time,
            "final_merit": self.final_merit,
            "step_sizes": list(self.step_sizes),
            "merit_history": list(self.merit_history),
            "residual_norms": list(self.residual_norms),
            "direction_norms": list(self.direction_norms),
        }


@dataclass(frozen=True)
class LoadStepProblem:
    """Discrete problem of one load step with frozen memory."""

    space: P1Space
    materials: tuple[MaterialStack, ...]
    states: QuadPointState
    loads: GateLoads = GateLoads()
    h_source: FloatArray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "materials", tuple(self.materials))

    @cached_property
    def load_vector(self) -> FloatArray:
        return self.space.load_vector(self.loads)

    def evaluate(self, psi: npt.ArrayLike, *, with_jacobian: bool = False) -> FieldEvaluation:
        return evaluate_field(
            self.space, self.materials, self.states, psi, self.h_source, with_jacobian=with_jacobian
        )

    def merit_from(self, psi: npt.ArrayLike, ev: FieldEvaluation) -> float:
        return float(self.space.areas @ ev.wstar + self.load_vector @ np.asarray(psi, dtype=float))

    def residual_from(self, ev: FieldEvaluation) -> FloatArray:
        return self.space.weak_divergence(ev.b) - self.load_vector

    @property
    def lipschitz(self) -> FloatArray:
        """Per-triangle upper slope bound mu0 + sum_k 1/sigma_k."""
        bounds = np.array([m.lipschitz for m in self.materials])
        return bounds[self.states.material_ids]

    @property
    def mu0(self) -> FloatArray:
        values = np.array([m.mu0 for m in self.materials])
        return values[self.states.material_ids]


def merit(problem: LoadStepProblem, psi: npt.ArrayLike) -> float:
    """M(psi) = sum_T |T| w*(H_s - grad psi) + l(psi); its gradient is minus the residual."""
    return problem.merit_from(psi, problem.evaluate(psi))


# ---------------------------------------------------------------------------
# Tangent models
# ---------------------------------------------------------------------------


class TangentModel:
    """Supplies the SPD matrix K^n of the Newton-type system K^n delta = R(psi^n)."""

    strategy: ClassVar[Strategy]
    wants_jacobian: ClassVar[bool] = False

    def __init__(self, config: SolverConfig) -> None:
        self.config = config
        self.factorizations = 0

    def begin_step(self, problem: LoadStepProblem, psi: FloatArray, ev: FieldEvaluation) -> None:
        """Hook called with the initial iterate of every load step."""

    def factorization(
        self, problem: LoadStepProblem, psi: FloatArray, ev: FieldEvaluation
    ) -> Factorization:
        raise NotImplementedError

    def observe(self, before: FieldEvaluation, after: FieldEvaluation) -> None:
        """Hook called after every accepted update."""

    def _factor(self, problem: LoadStepProblem, blocks: npt.ArrayLike) -> Factorization:
        self.factorizations += 1
        return Factorization(problem.space.block_operator(blocks))


class SsnTangent(TangentModel):
    """Generalized Jacobian S_B at every barycenter, re-assembled each iteration."""

    strategy = Strategy.SSN
    wants_jacobian = True

    def factorization(
        self, problem: LoadStepProblem, psi: FloatArray, ev: FieldEvaluation
    ) -> Factorization:
        if ev.jacobian is None:
            ev = problem.evaluate(psi, with_jacobian=True)
        return self._factor(problem, ev.jacobian)


class LqnTangent(TangentModel):
    """Per-triangle damped BFGS on the 2x2 blocks, started from S_B at the first iterate."""

    strategy = Strategy.LQN
    skip_tol: ClassVar[float] = 1e-12
    damping: ClassVar[float] = 0.2

    def __init__(self, config: SolverConfig) -> None:
        super().__init__(config)
        self.blocks: FloatArray | None = None
        self.updates = 0
        self.skipped = 0

    def begin_step(self, problem: LoadStepProblem, psi: FloatArray, ev: FieldEvaluation) -> None:
        if ev.jacobian is None:
            ev = problem.evaluate(psi, with_jacobian=True)
        self.blocks = ev.jacobian.copy()

    def factorization(
        self, problem: LoadStepProblem, psi: FloatArray, ev: FieldEvaluation
    ) -> Factorization:
        if self.blocks is None:
            self.begin_step(problem, psi, ev)
        return self._factor(problem, self.blocks)

    def observe(self, before: FieldEvaluation, after: FieldEvaluation) -> None:
        if self.blocks is None:
            return
        s = after.h - before.h
        y = after.b - before.b
        self.blocks, applied = bfgs_update(self.blocks, s, y, skip_tol=self.skip_tol, damping=self.damping)
        self.updates += int(applied.sum())
        self.skipped += int((~applied).sum())


def bfgs_update(
    blocks: FloatArray,
    s: FloatArray,
    y: FloatArray,
    *,
    skip_tol: float = 1e-12,
    damping: float = 0.2,
) -> tuple[FloatArray, npt.NDArray[np.bool_]]:
    """Powell-damped BFGS update of per-triangle SPD blocks.

    Triangles with s.y <= skip_tol |s| |y| keep their block. Returns the
    updated blocks and the mask of triangles that were updated.
    """
    sy = np.einsum("ij,ij->i", s, y)
    bs = np.einsum("nij,nj->ni", blocks, s)
    sbs = np.einsum("ij,ij->i", s, bs)
    applied = (sy > skip_tol * np.linalg.norm(s, axis=1) * np.linalg.norm(y, axis=1)) & (sbs > 0)
    out = blocks.copy()
    if not applied.any():
        return out, applied
    s, y, bs, sy, sbs = s[applied], y[applied], bs[applied], sy[applied], sbs[applied]
    theta = np.where(sy >= damping * sbs, 1.0, (1.0 - damping) * sbs / np.maximum(sbs - sy, 1e-300))
    r = theta[:, None] * y + (1.0 - theta[:, None]) * bs
    sr = np.einsum("ij,ij->i", s, r)
    update = (
        -np.einsum("ni,nj->nij", bs, bs) / sbs[:, None, None]
        + np.einsum("ni,nj->nij", r, r) / sr[:, None, None]
    )
    new = out[applied] + update
    out[applied] = 0.5 * (new + np.transpose(new, (0, 2, 1)))
    return out, applied


class LcmTangent(TangentModel):
    """Scalar slopes from difference quotients at the first iterate, one factorization per step."""

    strategy = Strategy.LCM
    min_denominator: ClassVar[float] = 1e-14

    def __init__(self, config: SolverConfig) -> None:
        super().__init__(config)
        self.slopes: FloatArray | None = None
        self._factorization: Factorization | None = None

    def begin_step(self, problem: LoadStepProblem, psi: FloatArray, ev: FieldEvaluation) -> None:
        self.slopes = difference_slopes(problem, psi, ev, self.config.lcm_fd_step, self.min_denominator)
        self._factorization = self._factor(problem, self.slopes)

    def factorization(
        self, problem: LoadStepProblem, psi: FloatArray, ev: FieldEvaluation
    ) -> Factorization:
        if self._factorization is None:
            self.begin_step(problem, psi, ev)
        assert self._factorization is not None
        return self._factorization


def difference_slopes(
    problem: LoadStepProblem,
    psi: FloatArray,
    ev: FieldEvaluation,
    step: float,
    min_denominator: float = 1e-14,
) -> FloatArray:
    """S_T = (dBx/dHx + dBy/dHy)/2 by forward differences, clamped to [mu0, mu0 + sum 1/sigma_k]."""
    base = np.zeros_like(ev.h) if problem.h_source is None else np.broadcast_to(problem.h_source, ev.h.shape)
    quotients = []
    for axis in range(2):
        shift = np.zeros(2)
        shift[axis] = step
        shifted = evaluate_field(
            problem.space, problem.materials, problem.states, psi, base + shift
        )
        delta_h = shifted.h[:, axis] - ev.h[:, axis]
        delta_b = shifted.b[:, axis] - ev.b[:, axis]
        ok = np.abs(delta_h) >= min_denominator
        q = np.where(ok, delta_b / np.where(ok, delta_h, 1.0), problem.mu0)
        quotients.append(q)
    slopes = 0.5 * (quotients[0] + quotients[1])
    return np.clip(slopes, problem.mu0, problem.lipschitz)


class GcmTangent(TangentModel):
    """Constant mu0 * mu_r for every triangle; one factorization per mesh, reused over a whole cycle."""

    strategy = Strategy.GCM

    def __init__(self, config: SolverConfig) -> None:
        super().__init__(config)
        self._space: P1Space | None = None
        self._factorization: Factorization | None = None

    def factorization(
        self, problem: LoadStepProblem, psi: FloatArray, ev: FieldEvaluation
    ) -> Factorization:
        if self._factorization is None or self._space is not problem.space:
            slope = MU0 * self.config.gcm_mu_r
            self._factorization = self._factor(problem, np.full(problem.space.mesh.n_triangles, slope))
            self._space = problem.space
        return self._factorization


_TANGENTS: dict[Strategy, type[TangentModel]] = {
    Strategy.SSN: SsnTangent,
    Strategy.LQN: LqnTangent,
    Strategy.LCM: LcmTangent,
    Strategy.GCM: GcmTangent,
}


def make_tangent(config: SolverConfig) -> TangentModel:
    return _TANGENTS[config.strategy](config)


# ---------------------------------------------------------------------------
# Update with line search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NewtonStep:
    direction: FloatArray
    residual: FloatArray
    decrement: float  # delta^T K delta = -M'(psi)[delta]


def newton_step(
    problem: LoadStepProblem,
    psi: FloatArray,
    tangent: TangentModel,
    ev: FieldEvaluation | None = None,
) -> NewtonStep:
    """Solve K^n delta = R(psi^n) with the tangent of the active strategy.

    Raises:
        NotSPDError: If the tangent is not positive definite.
    """
    psi = np.asarray(psi, dtype=float)
    if ev is None:
        ev = problem.evaluate(psi, with_jacobian=tangent.wants_jacobian)
    residual = problem.residual_from(ev)
    direction = tangent.factorization(problem, psi, ev).solve(residual)
    decrement = float(direction @ residual)
    scale = float(np.linalg.norm(direction) * np.linalg.norm(residual))
    if decrement < -1e-10 * scale:
        raise NotSPDError(f"search direction is not a descent direction (decrement {decrement:.3g})")
    return NewtonStep(direction=direction, residual=residual, decrement=max(decrement, 0.0))


@dataclass(frozen=True)
class LineSearchResult:
    tau: float
    backtracks: int
    psi: FloatArray
    merit: float
    evaluation: FieldEvaluation


def armijo_linesearch(
    problem: LoadStepProblem,
    psi: FloatArray,
    direction: FloatArray,
    *,
    merit0: float,
    slope: float,
    config: SolverConfig,
    with_jacobian: bool = False,
) -> LineSearchResult:
    """Largest tau = rho^m with M(psi + tau delta) <= M(psi) + sigma tau M'(0).

    ``slope`` is M'(0) = -delta^T K delta. When even the full-step decrease
    sigma |M'(0)| is below the round-off level 16 eps max(|M(psi)|, 1), a trial
    that stays within that level of M(psi) is accepted as well.

    Raises:
        LineSearchError: If no step is accepted within ``max_backtracks`` halvings.
    """
    if slope > 0:
        raise LineSearchError(f"direction is not a descent direction (M'(0) = {slope:.3g})")
    noise = 16 * _EPS * max(abs(merit0), 1.0)
    flat = -config.armijo_sigma * slope < noise
    tau = 1.0
    for m in range(config.max_backtracks + 1):
        trial = psi + tau * direction
        ev = problem.evaluate(trial, with_jacobian=with_jacobian)
        value = problem.merit_from(trial, ev)
        if value <= merit0 + config.armijo_sigma * tau * slope or (flat and value <= merit0 + noise):
            return LineSearchResult(tau=tau, backtracks=m, psi=trial, merit=value, evaluation=ev)
        tau *= config.armijo_rho
    raise LineSearchError(
        f"Armijo backtracking failed after {config.max_backtracks} reductions "
        f"(M0 = {merit0:.6g}, M'(0) = {slope:.3g})"
    )


def run_load_step(
    problem: LoadStepProblem,
    psi0: npt.ArrayLike | None = None,
    config: SolverConfig | None = None,
    *,
    tangent: TangentModel | None = None,
) -> tuple[FloatArray, SolveReport, FieldEvaluation]:
    """Iterate psi^{n+1} = psi^n + tau^n delta^n until the merit stalls.

    Stops before an update when the decrement delta^T K delta falls below
    term_rel_tol * M_ref, and after an update when |M^{n+1} - M^n| does,
    with M_ref = max(|M(psi^0)|, 1).

    Args:
        problem: Load step with frozen memory.
        psi0: Initial potential (default 0).
        config: Solver settings; defaults to SSN.
        tangent: Reuse a tangent model across steps (GCM keeps its factorization).

    Returns:
        Final potential, report and the material evaluation at the final potential.

    Raises:
        MaxItersError: After ``max_iters`` updates; the partial report is attached as ``report``.
        LineSearchError: If backtracking fails.
    """
    config = config or SolverConfig()
    tangent = tangent or make_tangent(config)
    start = time.perf_counter()
    psi = np.zeros(problem.space.n_free) if psi0 is None else np.array(psi0, dtype=float)
    if psi.shape != (problem.space.n_free,):
        raise ValueError(f"psi0 must have {problem.space.n_free} entries, got shape {psi.shape}")
    report = SolveReport(strategy=config.strategy)
    factorizations0 = tangent.factorizations

    ev = problem.evaluate(psi, with_jacobian=tangent.wants_jacobian)
    value = problem.merit_from(psi, ev)
    m_ref = max(abs(value), 1.0)
    threshold = config.term_rel_tol * m_ref
    report.merit_history.append(value)
    tangent.begin_step(problem, psi, ev)

    try:
        while True:
            step = newton_step(problem, psi, tangent, ev)
            report.residual_norms.append(float(np.linalg.norm(step.residual)))
            if step.decrement <= threshold:
                report.converged = True
                break
            if report.iterations >= config.max_iters:
                raise MaxItersError(
                    f"{config.strategy.value}: no convergence within {config.max_iters} iterations "
                    f"(merit {value:.10g}, decrement {step.decrement:.3g})"
                )
            ls = armijo_linesearch(
                problem,
                psi,
                step.direction,
                merit0=value,
                slope=-step.decrement,
                config=config,
                with_jacobian=tangent.wants_jacobian,
            )
            tangent.observe(ev, ls.evaluation)
            report.iterations += 1
            report.step_sizes.append(ls.tau)
            report.merit_history.append(ls.merit)
            report.direction_norms.append(energy_norm(problem.space, step.direction))
            _logger.debug(
                "%s iter %d: tau=%.3g merit=%.12g |delta|_h=%.3e",
                config.strategy.value,
                report.iterations,
                ls.tau,
                ls.merit,
                report.direction_norms[-1],
            )
            change = abs(ls.merit - value)
            psi, ev, value = ls.psi, ls.evaluation, ls.merit
            if change <= threshold:
                report.converged = True
                break
    except (MaxItersError, LineSearchError) as exc:
        report.wall_time = time.perf_counter() - start
        report.factorizations = tangent.factorizations - factorizations0
        exc.report = report  # type: ignore[attr-defined]
        raise

    report.wall_time = time.perf_counter() - start
    report.factorizations = tangent.factorizations - factorizations0
    _logger.info(
        "%s converged in %d iterations (%.3fs, merit %.10g)",
        config.strategy.value,
        report.iterations,
        report.wall_time,
        value,
    )
    return psi, report, ev


def solve_all(
    problem: LoadStepProblem,
    strategies: Sequence[Strategy | str],
    base: SolverConfig | None = None,
) -> dict[Strategy, tuple[FloatArray, SolveReport]]:
    """Run the same load step with several strategies from psi = 0."""
    base = base or SolverConfig()
    out: dict[Strategy, tuple[FloatArray, SolveReport]] = {}
    for name in strategies:
        strategy = Strategy.from_name(name)
        cfg = replace(base, strategy=strategy)
        psi, report, _ = run_load_step(problem, None, cfg)
        out[strategy] = (psi, report)
    return out
