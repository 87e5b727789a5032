"""Operational constraints on load forecasts: parse from question text, check,
and project a forecast onto the feasible set.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import TimeSeries
from .errors import AmbiguousConstraint, InfeasibleConstraint, InvalidValue, MissingAnchor

KINDS = ("max_load", "min_load", "ramp_rate", "variability")
CHECK_TOL = 1e-9


@dataclass(frozen=True)
class ConstraintSpec:
    kind: str
    value: float
    anchor: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidValue(f"unknown constraint kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if not math.isfinite(self.value):
            raise InvalidValue("constraint value must be finite")
        if self.kind in ("ramp_rate", "variability") and self.value < 0:
            raise InvalidValue(f"{self.kind} limit must be >= 0")
        if self.anchor is not None and not math.isfinite(self.anchor):
            raise InvalidValue("anchor must be finite")
        object.__setattr__(self, "value", float(self.value))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "anchor": self.anchor}

    @classmethod
    def from_dict(cls, d) -> "ConstraintSpec":
        return cls(d["kind"], d["value"], d.get("anchor"))


@dataclass(frozen=True)
class Violation:
    kind: str
    indices: tuple[int, ...]
    magnitude: float


_NUM = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
_PATTERNS = {
    "max_load": [
        rf"maximum allowable system load (?:does not exceed|of|is|at)\s+{_NUM}\s*MW",
        rf"maximum (?:allowable )?load (?:limit )?of\s+{_NUM}\s*MW",
    ],
    "min_load": [
        rf"maintained above a minimum of\s+{_NUM}\s*MW",
        rf"minimum allowable system load of\s+{_NUM}\s*MW",
    ],
    "ramp_rate": [
        rf"ramp rate to ensure it does not exceed\s+{_NUM}\s*MW",
        rf"ramp rate (?:limit )?of\s+{_NUM}\s*MW",
    ],
    "variability": [
        rf"variability so that it does not exceed\s+{_NUM}\s*MW",
        rf"variability (?:limit )?of\s+{_NUM}\s*MW",
    ],
}


def parse_constraint(question: str) -> Optional[ConstraintSpec]:
    """Extract the single constraint clause from a task question, if any."""
    found: list[tuple[str, float]] = []
    for kind, patterns in _PATTERNS.items():
        for pat in patterns:
            for m in re.finditer(pat, question, flags=re.IGNORECASE):
                found.append((kind, float(m.group(1))))
    distinct = sorted(set(found))
    if not distinct:
        return None
    if len(distinct) > 1:
        raise AmbiguousConstraint(f"question matches several constraint clauses: {distinct}")
    kind, value = distinct[0]
    return ConstraintSpec(kind, value)


def _values(forecast) -> np.ndarray:
    x = forecast.values if isinstance(forecast, TimeSeries) else np.asarray(forecast, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InvalidValue("forecast must be a non-empty 1-D series")
    return x


def _tol(value: float, tol: float) -> float:
    return tol * max(1.0, abs(value))


def check(forecast, spec: ConstraintSpec, tol: float = CHECK_TOL) -> list[Violation]:
    """Violations of ``spec``; equality with the limit is allowed."""
    y = _values(forecast)
    eps = _tol(spec.value, tol)
    if spec.kind == "max_load":
        excess = y - spec.value
    elif spec.kind == "min_load":
        excess = spec.value - y
    elif spec.kind == "ramp_rate":
        if spec.anchor is None:
            raise MissingAnchor("ramp_rate check needs the last observed value as anchor")
        excess = np.abs(np.diff(np.r_[spec.anchor, y])) - spec.value
    else:
        sd = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
        if sd > spec.value + eps:
            return [Violation(spec.kind, tuple(range(y.size)), sd - spec.value)]
        return []
    bad = np.flatnonzero(excess > eps)
    if bad.size == 0:
        return []
    return [Violation(spec.kind, tuple(int(i) for i in bad), float(excess[bad].max()))]


def _project_values(y: np.ndarray, spec: ConstraintSpec) -> np.ndarray:
    if spec.kind == "max_load":
        return np.minimum(y, spec.value)
    if spec.kind == "min_load":
        return np.maximum(y, spec.value)
    if spec.kind == "ramp_rate":
        if spec.anchor is None:
            raise MissingAnchor("ramp_rate projection needs the last observed value as anchor")
        out = np.empty_like(y)
        prev = spec.anchor
        for t, v in enumerate(y):
            prev = min(max(v, prev - spec.value), prev + spec.value)
            out[t] = prev
        return out
    if y.size < 2:
        return y.copy()
    mean = y.mean()
    sd = float(np.std(y, ddof=1))
    if sd <= spec.value + _tol(spec.value, CHECK_TOL) or sd == 0:
        return y.copy()
    return mean + (y - mean) * (spec.value / sd)


def project(forecast, spec: ConstraintSpec):
    """Feasible version of ``forecast`` (same type as the input when it is a series)."""
    y = _values(forecast)
    # anything the checker accepts is left alone, so both agree exactly
    out = y.copy() if not check(y, spec) else _project_values(y, spec)
    if isinstance(forecast, TimeSeries):
        return TimeSeries(out, forecast.start, forecast.step, forecast.name)
    return out


def project_all(forecast, specs: Sequence[ConstraintSpec], max_rounds: int = 10):
    """Round-robin projection onto several constraints at once."""
    lo = max((s.value for s in specs if s.kind == "min_load"), default=-math.inf)
    hi = min((s.value for s in specs if s.kind == "max_load"), default=math.inf)
    if lo > hi:
        raise InfeasibleConstraint(f"minimum load {lo} exceeds maximum load {hi}")
    current = forecast
    for _ in range(max_rounds):
        for s in specs:
            current = project(current, s)
        if not any(check(current, s) for s in specs):
            return current
    raise InfeasibleConstraint(f"no feasible forecast found after {max_rounds} projection rounds")
