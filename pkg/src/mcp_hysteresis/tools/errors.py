"""Exception hierarchy shared by all hysteresis tools."""

from __future__ import annotations


class HysteresisError(ValueError):
    """Base class; a ValueError so tool wrappers can catch it uniformly."""


class DomainError(HysteresisError):
    """A polarization lies outside the energy domain |J| < Js."""


class ConvergenceError(HysteresisError):
    """An inner (local) iteration did not reach its tolerance."""


class GeometryError(HysteresisError):
    """Inconsistent geometric parameters."""


class ParseError(HysteresisError):
    """Malformed mesh file."""

    def __init__(self, message: str, *, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class MeshValidationError(HysteresisError):
    """A mesh violates conformity, orientation or tagging invariants."""


class NotSPDError(HysteresisError):
    """A matrix expected to be symmetric positive definite is not."""


class OutsideDomainError(HysteresisError):
    """A probe point is not covered by any triangle."""


class LineSearchError(HysteresisError):
    """Armijo backtracking exhausted its step budget."""


class MaxItersError(HysteresisError):
    """The outer iteration did not terminate within max_iters."""


class StateValidationError(HysteresisError):
    """A committed polarization state violates |J_k| < Js_k."""


class ConfigError(HysteresisError):
    """Invalid run configuration."""


class SolutionMismatchError(HysteresisError):
    """Different solver strategies produced different solutions."""
