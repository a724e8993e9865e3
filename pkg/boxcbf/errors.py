"""Exception hierarchy for boxcbf.

Every error carries the structured data a caller needs to decide policy
(exit code, retry with a smaller step, discard a sample) as attributes.
"""
from __future__ import annotations
from typing import Any, Optional, Sequence

import numpy as np


class BoxCbfError(Exception):
    """Base class for all boxcbf errors."""
    pass


class ChannelConfigError(BoxCbfError, ValueError):
    """Invalid output channel, root vector or model parameter."""
    def __init__(self, detail: str, channel: Optional[str] = None, index: Optional[int] = None):
        self.channel = channel
        self.index = index
        self.detail = detail
        where = f"channel '{channel}'" if channel else "channel"
        if index is not None:
            where += f" (index {index})"
        super().__init__(f"{where}: {detail}")


class RegionError(BoxCbfError):
    """State outside the declared valid region of a model."""
    def __init__(self, state: Sequence[float], detail: str = "", trace: Any = None):
        self.state = np.asarray(state, dtype=float)
        self.trace = trace
        msg = f"state outside valid region: {np.array2string(self.state, precision=6)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class RankError(BoxCbfError):
    """Decoupling matrix singular to tolerance: vector relative degree fails."""
    def __init__(self, sigma_min: float, tolerance: float, state: Optional[Sequence[float]] = None):
        self.sigma_min = float(sigma_min)
        self.tolerance = float(tolerance)
        self.state = None if state is None else np.asarray(state, dtype=float)
        super().__init__(
            f"decoupling matrix singular: sigma_min={self.sigma_min:.3e} < tol={self.tolerance:.1e}"
        )


class DivergenceError(BoxCbfError):
    """Non-finite state during integration."""
    def __init__(self, step: int, trace: Any = None):
        self.step = step
        self.trace = trace
        super().__init__(f"non-finite state at step {step}")


class InfeasibleQpError(BoxCbfError):
    """Oracle enumeration accepted no candidate active set."""
    def __init__(self, candidates: int):
        self.candidates = candidates
        super().__init__(
            f"no feasible KKT candidate among {candidates} active sets "
            "(implementation bug or violated compatibility hypotheses)"
        )


class ConditioningError(BoxCbfError):
    """KKT system too ill-conditioned for a trustworthy solve."""
    def __init__(self, condition: float, limit: float):
        self.condition = float(condition)
        self.limit = float(limit)
        super().__init__(f"KKT condition number {self.condition:.3e} exceeds {self.limit:.1e}")


class InvalidCertificateError(BoxCbfError):
    """ISS certificate fails its own grid validation."""
    def __init__(self, residuals: dict):
        self.residuals = dict(residuals)
        parts = ", ".join(f"{k}={v:.3e}" for k, v in self.residuals.items())
        super().__init__(f"tracking certificate violates its validation grid: {parts}")


class IdentityViolation(BoxCbfError, AssertionError):
    """Algebraic identity of the compatibility certificate broken (implementation bug)."""
    def __init__(self, error: float, tolerance: float):
        self.error = float(error)
        self.tolerance = float(tolerance)
        super().__init__(
            f"multiplier identity violated by {self.error:.3e} (tol {self.tolerance:.1e})"
        )


class ScenarioParseError(BoxCbfError, ValueError):
    """Malformed or invalid scenario configuration."""
    def __init__(self, detail: str, path: Optional[str] = None,
                 line: Optional[int] = None, field: Optional[str] = None):
        self.detail = detail
        self.path = path
        self.line = line
        self.field = field
        loc = path or "<config>"
        if line is not None:
            loc += f":{line}"
        if field:
            loc += f" [{field}]"
        super().__init__(f"{loc}: {detail}")


class SamplingError(BoxCbfError):
    """Rejection sampling could not produce enough valid states."""
    def __init__(self, attempts: int, rejected: int, detail: str = ""):
        self.attempts = attempts
        self.rejected = rejected
        msg = f"sampling gave up after {attempts} attempts ({rejected} rejected)"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


__all__ = [
    "BoxCbfError",
    "ChannelConfigError",
    "RegionError",
    "RankError",
    "DivergenceError",
    "InfeasibleQpError",
    "ConditioningError",
    "InvalidCertificateError",
    "IdentityViolation",
    "ScenarioParseError",
    "SamplingError",
]
