"""Value model shared by every module: series, frames, vectors, task instances
and the three scoring metrics (MAPE, binary F1, pairwise adjacency accuracy).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence, Union

import numpy as np

from .errors import InvalidValue, LengthMismatch, ShapeMismatch, ZeroDenominator

MAPE_EPS = 1e-8
ZERO_TOL = 1e-12


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Regularly sampled univariate series."""

    values: np.ndarray
    start: datetime = datetime(2020, 1, 1)
    step: timedelta = timedelta(hours=1)
    name: str = "value"

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidValue(f"series {self.name!r} must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise InvalidValue(f"series {self.name!r} contains non-finite values")
        if self.step <= timedelta(0):
            raise InvalidValue("series step must be positive")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.size

    @property
    def index(self) -> list[datetime]:
        return [self.start + i * self.step for i in range(len(self))]

    @property
    def end(self) -> datetime:
        """Timestamp one step after the last observation."""
        return self.start + len(self) * self.step

    def with_values(self, values, name: str | None = None, start: datetime | None = None) -> "TimeSeries":
        return TimeSeries(values, start or self.start, self.step, name or self.name)

    def slice(self, lo: int | None = None, hi: int | None = None) -> "TimeSeries":
        lo_i = 0 if lo is None else (lo if lo >= 0 else len(self) + lo)
        return TimeSeries(self.values[lo:hi], self.start + lo_i * self.step, self.step, self.name)

    def continuation(self, values, name: str | None = None) -> "TimeSeries":
        """Series starting right after this one (used for forecasts)."""
        return TimeSeries(values, self.end, self.step, name or self.name)

    def same_as(self, other: "TimeSeries") -> bool:
        return (
            isinstance(other, TimeSeries)
            and self.start == other.start
            and self.step == other.step
            and self.name == other.name
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class Frame:
    """Column-aligned multivariate table; columns share start and step."""

    columns: tuple[TimeSeries, ...]

    def __post_init__(self):
        cols = tuple(self.columns)
        if not cols:
            raise InvalidValue("frame needs at least one column")
        n = len(cols[0])
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise InvalidValue(f"duplicate column names in frame: {names}")
        for c in cols:
            if len(c) != n:
                raise InvalidValue("frame columns must have equal length")
            if c.start != cols[0].start or c.step != cols[0].step:
                raise InvalidValue("frame columns must share the same index")
        object.__setattr__(self, "columns", cols)

    @classmethod
    def from_array(cls, data, names: Sequence[str], start=datetime(2020, 1, 1), step=timedelta(hours=1)) -> "Frame":
        arr = np.asarray(data, dtype=float)
        return cls(tuple(TimeSeries(arr[:, j], start, step, names[j]) for j in range(arr.shape[1])))

    def __len__(self) -> int:
        return len(self.columns[0])

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def start(self) -> datetime:
        return self.columns[0].start

    @property
    def step(self) -> timedelta:
        return self.columns[0].step

    @property
    def index(self) -> list[datetime]:
        return self.columns[0].index

    @property
    def width(self) -> int:
        return len(self.columns)

    def to_array(self) -> np.ndarray:
        return np.column_stack([c.values for c in self.columns])

    def __getitem__(self, name: str) -> TimeSeries:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def slice(self, lo: int | None = None, hi: int | None = None) -> "Frame":
        return Frame(tuple(c.slice(lo, hi) for c in self.columns))

    def same_as(self, other: "Frame") -> bool:
        return (
            isinstance(other, Frame)
            and len(self.columns) == len(other.columns)
            and all(a.same_as(b) for a, b in zip(self.columns, other.columns))
        )


class IntVec(tuple):
    """Immutable vector of integers (e.g. spike indices)."""

    def __new__(cls, values=()):
        return super().__new__(cls, (int(v) for v in values))

    def __repr__(self):
        return f"IntVec({list(self)})"


class BinVec(tuple):
    """Immutable 0/1 label vector."""

    def __new__(cls, values=()):
        out = []
        for v in values:
            iv = int(v)
            if iv != v or iv not in (0, 1):
                raise InvalidValue(f"BinVec entries must be 0 or 1, got {v!r}")
            out.append(iv)
        return super().__new__(cls, out)

    def __repr__(self):
        return f"BinVec({list(self)})"

    def to_array(self) -> np.ndarray:
        return np.array(self, dtype=int)


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    stat: float
    p_value: float
    verdict: bool
    kind: str = ""


@dataclass(frozen=True)
class ModelHandle:
    """Fitted model: spec name plus learned coefficients (intercept first)."""

    model: str
    order: int
    coefficients: tuple[float, ...]
    intercept: float
    handle_id: str = ""


Value = Union[TimeSeries, Frame, float, int, IntVec, BinVec, np.ndarray, str, TestResult, ModelHandle]


def value_kind(v: Any) -> str:
    """Variant tag of a runtime value."""
    if isinstance(v, TimeSeries):
        return "series"
    if isinstance(v, Frame):
        return "frame"
    if isinstance(v, BinVec):
        return "binvec"
    if isinstance(v, IntVec):
        return "intvec"
    if isinstance(v, (bool, np.bool_)):
        return "scalar"
    if isinstance(v, (int, float, np.integer, np.floating)):
        return "scalar"
    if isinstance(v, np.ndarray):
        return "matrix" if v.ndim == 2 else "vector"
    if isinstance(v, str):
        return "text"
    if isinstance(v, TestResult):
        return "test_result"
    if isinstance(v, ModelHandle):
        return "model"
    return type(v).__name__


class TaskKind(str, Enum):
    PREDICTIVE = "predictive"
    DIAGNOSTIC_ANOMALY = "diagnostic_anomaly"
    DIAGNOSTIC_CAUSAL = "diagnostic_causal"


class Metric(str, Enum):
    MAPE = "mape"
    F1 = "f1"
    ACCURACY = "accuracy"


@dataclass(frozen=True)
class Quality:
    metric: Metric
    value: float

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        if not math.isfinite(self.value) or self.value < 0:
            raise InvalidValue(f"quality must be finite and >= 0, got {self.value}")
        if self.metric is not Metric.MAPE and self.value > 1:
            raise InvalidValue(f"{self.metric.value} must lie in [0, 1], got {self.value}")

    def to_dict(self) -> dict:
        return {"metric": self.metric.value, "value": self.value}


@dataclass(frozen=True)
class OutputContract:
    variant: str  # series | binvec | matrix
    shape: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"variant": self.variant, "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "OutputContract":
        return cls(d["variant"], tuple(d["shape"]))


@dataclass(frozen=True, eq=False)
class TaskInstance:
    id: str
    kind: TaskKind
    question: str
    env: Mapping[str, Any]
    ground_truth: Any
    output_contract: OutputContract
    constraint: Any = None  # ConstraintSpec, kept untyped to avoid an import cycle
    knowledge: Mapping[str, float] | None = None
    horizon: int | None = None
    family: str = ""
    seed: int | None = None
    tau: float = 0.1
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        if (self.horizon is not None) != (self.kind is TaskKind.PREDICTIVE):
            raise InvalidValue("horizon must be set exactly for predictive tasks")
        if self.horizon is not None and self.horizon < 1:
            raise InvalidValue("horizon must be positive")


# ---------------------------------------------------------------- metrics


def _as_array(x) -> np.ndarray:
    if isinstance(x, TimeSeries):
        return x.values
    return np.asarray(x, dtype=float)


def mape(actual, predicted) -> float:
    """Mean absolute percentage error; raises on (near-)zero actuals."""
    a, p = _as_array(actual), _as_array(predicted)
    if a.shape != p.shape or a.ndim != 1:
        raise LengthMismatch(f"mape needs equal-length 1-D inputs, got {a.shape} and {p.shape}")
    if a.size == 0:
        raise LengthMismatch("mape needs at least one value")
    if np.any(np.abs(a) < ZERO_TOL):
        raise ZeroDenominator("actual series contains a zero value")
    return float(np.mean(np.abs(a - p) / np.abs(a)))


def safe_mape(actual, predicted, eps: float = MAPE_EPS) -> float:
    """MAPE with denominator max(|a_t|, eps); used by the evaluator."""
    a, p = _as_array(actual), _as_array(predicted)
    if a.shape != p.shape or a.ndim != 1 or a.size == 0:
        raise LengthMismatch(f"mape needs equal-length 1-D inputs, got {a.shape} and {p.shape}")
    return float(np.mean(np.abs(a - p) / np.maximum(np.abs(a), eps)))


def f1_binary(truth, pred) -> float:
    t = np.asarray(truth, dtype=int)
    p = np.asarray(pred, dtype=int)
    if t.shape != p.shape:
        raise LengthMismatch(f"label vectors differ in length: {t.shape} vs {p.shape}")
    tp = int(np.sum((t == 1) & (p == 1)))
    fp = int(np.sum((t == 0) & (p == 1)))
    fn = int(np.sum((t == 1) & (p == 0)))
    if tp + fp + fn == 0:
        # nothing to find and nothing flagged
        return 1.0
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def pair_accuracy(truth_adj, pred_adj) -> float:
    """Agreement over the d(d-1) ordered off-diagonal pairs."""
    t = np.asarray(truth_adj)
    p = np.asarray(pred_adj)
    if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape != p.shape or t.shape[0] < 2:
        raise ShapeMismatch(f"need equal square matrices with d >= 2, got {t.shape} and {p.shape}")
    off = ~np.eye(t.shape[0], dtype=bool)
    return float(np.mean((t != 0)[off] == (p != 0)[off]))


# ---------------------------------------------------------------- CSV io


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_csv(value: TimeSeries | Frame, path: Path | None = None) -> str:
    """Serialize with a leading ISO-8601 ``timestamp`` column."""
    frame = value if isinstance(value, Frame) else Frame((value,))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", *frame.names])
    arr = frame.to_array()
    for ts, row in zip(frame.index, arr):
        w.writerow([ts.isoformat(), *(_fmt_float(x) for x in row)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(source: Path | str, *, text: bool = False) -> Frame:
    content = source if text else Path(source).read_text()
    rows = list(csv.reader(io.StringIO(content)))
    if not rows or rows[0][:1] != ["timestamp"]:
        raise InvalidValue("CSV must start with a header whose first column is 'timestamp'")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise InvalidValue("CSV has no data rows")
    stamps = [datetime.fromisoformat(r[0]) for r in body]
    step = stamps[1] - stamps[0] if len(stamps) > 1 else timedelta(hours=1)
    for a, b in zip(stamps, stamps[1:]):
        if b - a != step:
            raise InvalidValue("CSV timestamps must be regularly spaced")
    data = np.array([[float(x) for x in r[1:]] for r in body], dtype=float)
    if data.shape[1] != len(header) - 1:
        raise InvalidValue("ragged CSV rows")
    return Frame.from_array(data, header[1:], start=stamps[0], step=step)


def read_series_csv(source: Path | str, *, text: bool = False) -> TimeSeries:
    frame = read_csv(source, text=text)
    if frame.width != 1:
        raise InvalidValue(f"expected a single-column CSV, got columns {frame.names}")
    return frame.columns[0]


# ---------------------------------------------------------------- JSON-friendly summaries


def value_to_jsonable(v: Any) -> Any:
    """Lossless-enough JSON rendering used by traces and answers."""
    kind = value_kind(v)
    if kind == "series":
        return {"type": "series", "name": v.name, "start": v.start.isoformat(),
                "step_seconds": v.step.total_seconds(), "values": [float(x) for x in v.values]}
    if kind == "frame":
        return {"type": "frame", "columns": [value_to_jsonable(c) for c in v.columns]}
    if kind in ("binvec", "intvec"):
        return {"type": kind, "values": list(v)}
    if kind == "matrix":
        return {"type": "matrix", "values": [[float(x) for x in row] for row in v]}
    if kind == "vector":
        return {"type": "vector", "values": [float(x) for x in v]}
    if kind == "scalar":
        if isinstance(v, (bool, np.bool_)):
            return {"type": "scalar", "value": bool(v)}
        if isinstance(v, (int, np.integer)):
            return {"type": "scalar", "value": int(v)}
        return {"type": "scalar", "value": float(v)}
    if kind == "text":
        return {"type": "text", "value": v}
    if kind == "test_result":
        return {"type": "test_result", "kind": v.kind, "stat": v.stat, "p_value": v.p_value, "verdict": v.verdict}
    if kind == "model":
        return {"type": "model", "model": v.model, "order": v.order,
                "intercept": v.intercept, "coefficients": list(v.coefficients)}
    raise InvalidValue(f"cannot serialize value of kind {kind}")


def value_from_jsonable(d: Mapping) -> Any:
    t = d["type"]
    if t == "series":
        return TimeSeries(d["values"], datetime.fromisoformat(d["start"]),
                          timedelta(seconds=d["step_seconds"]), d["name"])
    if t == "frame":
        return Frame(tuple(value_from_jsonable(c) for c in d["columns"]))
    if t == "binvec":
        return BinVec(d["values"])
    if t == "intvec":
        return IntVec(d["values"])
    if t == "matrix":
        return np.array(d["values"], dtype=float)
    if t == "vector":
        return np.array(d["values"], dtype=float)
    if t == "scalar":
        return d["value"]
    if t == "text":
        return d["value"]
    if t == "test_result":
        return TestResult(d["stat"], d["p_value"], d["verdict"], d.get("kind", ""))
    if t == "model":
        return ModelHandle(d["model"], d["order"], tuple(d["coefficients"]), d["intercept"])
    raise InvalidValue(f"unknown value type {t!r}")
