"""Two-stage scoring of answers: validation (shape, constraint, non-triviality,
reasonable MAPE) and then a task-specific quality metric for the survivors.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .constraints import check
from .core import (
    BinVec,
    Metric,
    Quality,
    TaskInstance,
    TaskKind,
    TimeSeries,
    f1_binary,
    mape,
    pair_accuracy,
    read_csv,
    safe_mape,
    value_from_jsonable,
)
from .errors import EmptyResults, ZeroDenominator

REPORT_SCHEMA = 1
REASONS = ("ShapeMismatch", "ConstraintViolated", "TrivialOutput", "UnreasonableMape", "ExecutionFailed")
METRIC_FOR_KIND = {
    TaskKind.PREDICTIVE: Metric.MAPE,
    TaskKind.DIAGNOSTIC_ANOMALY: Metric.F1,
    TaskKind.DIAGNOSTIC_CAUSAL: Metric.ACCURACY,
}


@dataclass(frozen=True)
class Stage1:
    passed: bool
    reason: Optional[str] = None
    detail: str = ""


@dataclass(frozen=True)
class EvalResult:
    task_id: str
    family: str
    kind: TaskKind
    stage1: Stage1
    stage2: Optional[Quality] = None

    def __post_init__(self):
        if (self.stage2 is not None) != self.stage1.passed:
            raise ValueError("stage2 must be present exactly when stage1 passed")

    @property
    def passed(self) -> bool:
        return self.stage1.passed

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "family": self.family,
            "kind": self.kind.value,
            "passed": self.stage1.passed,
            "reason": self.stage1.reason,
            "detail": self.stage1.detail,
            "quality": None if self.stage2 is None else self.stage2.to_dict(),
        }


# ---------------------------------------------------------------- stage 1


def _as_vector(output: Any) -> np.ndarray:
    if isinstance(output, TimeSeries):
        return output.values
    return np.asarray(output, dtype=float)


def _shape_problem(output: Any, task: TaskInstance) -> Optional[str]:
    contract = task.output_contract
    try:
        arr = _as_vector(output)
    except (TypeError, ValueError):
        return f"output of type {type(output).__name__} is not numeric"
    if arr.shape != tuple(contract.shape):
        return f"expected shape {tuple(contract.shape)}, got {arr.shape}"
    if not np.all(np.isfinite(arr)):
        return "output contains non-finite values"
    if contract.variant in ("binvec", "matrix") and not np.isin(arr, (0, 1)).all():
        return f"{contract.variant} entries must be 0 or 1"
    return None


def _forced_constant(task: TaskInstance) -> bool:
    spec = task.constraint
    return spec is not None and spec.kind in ("ramp_rate", "variability") and spec.value == 0


def _predictive_mape(truth: np.ndarray, pred: np.ndarray) -> float:
    try:
        return mape(truth, pred)
    except ZeroDenominator:
        return safe_mape(truth, pred)


def validate_solution(output: Any, task: TaskInstance) -> Stage1:
    """First failing check wins: shape, constraint, non-triviality, MAPE < 1."""
    problem = _shape_problem(output, task)
    if problem:
        return Stage1(False, "ShapeMismatch", problem)
    arr = _as_vector(output)
    if task.kind is TaskKind.PREDICTIVE:
        if task.constraint is not None:
            violations = check(arr, task.constraint)
            if violations:
                v = violations[0]
                return Stage1(False, "ConstraintViolated",
                              f"{v.kind} exceeded by {v.magnitude:.6g} at {len(v.indices)} step(s)")
        if np.ptp(arr) == 0 and not _forced_constant(task):
            return Stage1(False, "TrivialOutput", "forecast is constant")
        m = _predictive_mape(_as_vector(task.ground_truth), arr)
        if m >= 1:
            return Stage1(False, "UnreasonableMape", f"MAPE {m:.4f} is not below 1")
        return Stage1(True)
    truth = _as_vector(task.ground_truth)
    if task.kind is TaskKind.DIAGNOSTIC_CAUSAL:
        mask = ~np.eye(truth.shape[0], dtype=bool)
        truth, arr = truth[mask], arr[mask]
    if 0 < truth.sum() < truth.size and (arr.sum() == 0 or arr.sum() == arr.size):
        return Stage1(False, "TrivialOutput", f"all labels are {int(arr[0])} while the truth is mixed")
    return Stage1(True)


# ---------------------------------------------------------------- stage 2


def score_solution(output: Any, task: TaskInstance) -> Quality:
    arr = _as_vector(output)
    truth = _as_vector(task.ground_truth)
    if task.kind is TaskKind.PREDICTIVE:
        return Quality(Metric.MAPE, _predictive_mape(truth, arr))
    if task.kind is TaskKind.DIAGNOSTIC_ANOMALY:
        return Quality(Metric.F1, f1_binary(truth, arr))
    return Quality(Metric.ACCURACY, pair_accuracy(truth, arr))


def evaluate(output: Any, task: TaskInstance) -> EvalResult:
    stage1 = validate_solution(output, task)
    stage2 = score_solution(output, task) if stage1.passed else None
    return EvalResult(task.id, task.family, task.kind, stage1, stage2)


def execution_failed(task: TaskInstance, detail: str) -> EvalResult:
    return EvalResult(task.id, task.family, task.kind, Stage1(False, "ExecutionFailed", detail))


# ---------------------------------------------------------------- aggregation


def _family_block(results: Sequence[EvalResult]) -> dict:
    passes = [r.stage2.value for r in results if r.passed]
    errors: dict[str, int] = {}
    for r in results:
        if not r.passed:
            errors[r.stage1.reason] = errors.get(r.stage1.reason, 0) + 1
    block = {
        "n": len(results),
        "passed": len(passes),
        "success_rate": len(passes) / len(results),
        "metric": METRIC_FOR_KIND[results[0].kind].value,
        "mean": None,
        "std": None,
        "errors": dict(sorted(errors.items())),
    }
    if passes:
        block["mean"] = statistics.fmean(passes)
        block["std"] = statistics.stdev(passes) if len(passes) > 1 else 0.0
    return block


def aggregate(results: Iterable[EvalResult]) -> dict:
    """Report dict; metric statistics use successful instances only."""
    ordered = sorted(results, key=lambda r: r.task_id)
    if not ordered:
        raise EmptyResults("cannot aggregate an empty result list")
    families: dict[str, list[EvalResult]] = {}
    for r in ordered:
        families.setdefault(r.family or r.kind.value, []).append(r)
    errors: dict[str, int] = {}
    for r in ordered:
        if not r.passed:
            errors[r.stage1.reason] = errors.get(r.stage1.reason, 0) + 1
    return {
        "schema": REPORT_SCHEMA,
        "total": len(ordered),
        "passed": sum(r.passed for r in ordered),
        "success_rate": sum(r.passed for r in ordered) / len(ordered),
        "errors": dict(sorted(errors.items())),
        "families": {f: _family_block(rs) for f, rs in sorted(families.items())},
        "results": [r.to_dict() for r in ordered],
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _num(x: Optional[float]) -> str:
    return "-" if x is None else f"{x:.4f}"


def render_table(report: dict) -> str:
    header = ("Family", "N", "Success Rate", "Metric", "Mean (Std)", "Failures")
    rows = [header]
    for fam, b in report["families"].items():
        stats = "-" if b["mean"] is None else f"{_num(b['mean'])} ({_num(b['std'])})"
        fails = ", ".join(f"{k}={v}" for k, v in b["errors"].items()) or "-"
        rows.append((fam, str(b["n"]), f"{b['success_rate']:.4f}", b["metric"], stats, fails))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    lines.append(f"overall: {report['passed']}/{report['total']} succeeded "
                 f"({report['success_rate']:.4f})")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- external answers


class MalformedAnswer(ValueError):
    pass


def _parse_plain_csv(text: str) -> np.ndarray:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise MalformedAnswer("empty CSV")
    try:
        data = [[float(x) for x in r] for r in rows]
    except ValueError:
        # allow one header row
        try:
            data = [[float(x) for x in r] for r in rows[1:]]
        except ValueError as exc:
            raise MalformedAnswer(f"non-numeric CSV cell: {exc}") from exc
    if not data or len({len(r) for r in data}) != 1:
        raise MalformedAnswer("ragged or empty CSV")
    arr = np.array(data, dtype=float)
    return arr[:, 0] if arr.shape[1] == 1 else arr


def load_answer(task_dir: Path) -> Any:
    """Answer from ``answer.json`` or ``answer.csv``; FileNotFoundError if absent."""
    task_dir = Path(task_dir)
    jpath, cpath = task_dir / "answer.json", task_dir / "answer.csv"
    if jpath.exists():
        try:
            doc = json.loads(jpath.read_text())
        except json.JSONDecodeError as exc:
            raise MalformedAnswer(f"invalid JSON: {exc}") from exc
        if isinstance(doc, dict) and "type" in doc:
            try:
                return value_from_jsonable(doc)
            except Exception as exc:
                raise MalformedAnswer(str(exc)) from exc
        if isinstance(doc, dict) and "answer" in doc:
            doc = doc["answer"]
        try:
            return np.asarray(doc, dtype=float)
        except (TypeError, ValueError) as exc:
            raise MalformedAnswer(f"answer is not numeric: {exc}") from exc
    if cpath.exists():
        text = cpath.read_text()
        if text.startswith("timestamp"):
            try:
                frame = read_csv(text, text=True)
            except Exception as exc:
                raise MalformedAnswer(str(exc)) from exc
            arr = frame.to_array()
            return arr[:, 0] if frame.width == 1 else arr
        return _parse_plain_csv(text)
    raise FileNotFoundError(f"no answer.json or answer.csv in {task_dir}")


def evaluate_answer_dir(task: TaskInstance, outputs_dir: Path) -> EvalResult:
    try:
        answer = load_answer(Path(outputs_dir) / task.id)
    except FileNotFoundError as exc:
        return execution_failed(task, f"missing answer: {exc}")
    except MalformedAnswer as exc:
        return EvalResult(task.id, task.family, task.kind, Stage1(False, "ShapeMismatch", f"malformed answer: {exc}"))
    if isinstance(answer, BinVec):
        answer = np.asarray(answer, dtype=float)
    return evaluate(answer, task)

