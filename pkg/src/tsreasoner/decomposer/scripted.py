"""Deterministic template decomposer.

Stands in for the LLM in offline runs. Its reaction to feedback mirrors what
the prompt asks of a model: substitute unavailable operators, rotate to the
next forecasting backend when quality is too low, and fall back to the best
buffered plan once every backend has been tried.
"""

from __future__ import annotations

import re
from datetime import timedelta
from typing import Mapping, Optional, Sequence

from .. import feedback as fb
from ..constraints import parse_constraint
from ..core import Frame, TaskInstance, TaskKind, TimeSeries
from ..errors import UnknownTaskKind
from ..stats_ops import dominant_period

UNI_ROTATION = ("holt_winters", "ar_ls", "seasonal_naive")
COV_ROTATION = ("lagged_regression", "holt_winters", "ar_ls", "seasonal_naive")
FIT_MIN_HISTORY = 200
CAUSAL_MAX_LAG = 5

_SUBSTITUTE_RE = re.compile(r"operator (\w+) is not available; use (\w+) instead")


def guess_period(series: TimeSeries) -> int:
    """Daily cycle in steps when the sampling allows it, else the periodogram peak."""
    per_day = timedelta(days=1) / series.step
    if float(per_day).is_integer() and 2 <= per_day <= len(series) / 2:
        return int(per_day)
    return dominant_period(series)


def _num(x: float) -> str:
    return repr(float(x))


def _substitutions(history: Sequence[fb.Feedback]) -> dict[str, str]:
    subs: dict[str, str] = {}
    for f in history:
        for err in fb.parse_errors(f.message):
            if err.code == "UnimplementedOp":
                m = _SUBSTITUTE_RE.search(err.message)
                if m:
                    subs[m.group(1)] = m.group(2)
    return subs


def _apply_subs(lines: list[str], subs: Mapping[str, str]) -> list[str]:
    out = []
    for line in lines:
        target, _, call = line.partition(" = ")
        op, paren, rest = call.partition("(")
        out.append(f"{target} = {subs.get(op, op)}{paren}{rest}")
    return out


def _forecast_lines(task: TaskInstance, backend: str) -> list[str]:
    val: TimeSeries = task.env["VAL"]
    period = guess_period(val)
    h = task.horizon
    if backend == "lagged_regression":
        return [f'FORECAST = MultiPreOP(data=VAL, covariates=COV, future_length={h}, '
                f'model="lagged_regression", period={period}, ar_order={period})']
    if backend == "ar_ls" and len(val) >= FIT_MIN_HISTORY:
        return [f"MODEL = trainForecastOP(data=VAL, order={period})",
                f"FORECAST = UniPreOP(data=VAL, future_length={h}, model=MODEL)"]
    if backend == "ar_ls":
        return [f'FORECAST = UniPreOP(data=VAL, future_length={h}, model="ar_ls", ar_order={period})']
    return [f'FORECAST = UniPreOP(data=VAL, future_length={h}, model="{backend}", period={period})']


def _predictive(task: TaskInstance, history: Sequence[fb.Feedback], use_project: bool) -> list[str]:
    rotation = COV_ROTATION if isinstance(task.env.get("COV"), (Frame, TimeSeries)) else UNI_ROTATION
    backend = rotation[0]
    buffered = fb.parse_buffer(history[-1].message) if history else None
    if buffered:
        best_label = min(buffered, key=lambda mq: mq[1])[0]
        backend = best_label.split("(", 1)[0]
    else:
        n_quality = sum(1 for f in history if fb.parse_quality(f.message))
        backend = rotation[n_quality % len(rotation)]
    lines = _forecast_lines(task, backend)
    spec = parse_constraint(task.question)
    if spec is None or not use_project:
        lines[-1] = lines[-1].replace("FORECAST = ", "FINAL_RESULT = ", 1)
        return lines
    extra = ", history=VAL" if spec.kind == "ramp_rate" else ""
    lines.append(f'FINAL_RESULT = ProjectOP(data=FORECAST, kind="{spec.kind}", value={_num(spec.value)}{extra})')
    return lines


def _anomaly(task: TaskInstance) -> list[str]:
    if "NORM_VAL" in task.env:
        return ["NORM_SCORE = AnomalDetOP(data=NORM_VAL)",
                "THRES = calibrateThreshOP(data=NORM_SCORE)",
                "TEST_SCORE = AnomalDetOP(data=VAL)",
                "FINAL_RESULT = convertBinaryOP(data=TEST_SCORE, threshold=THRES)"]
    if "ANOMALY_RATE" in task.env:
        return ["TEST_SCORE = AnomalDetOP(data=VAL)",
                "FINAL_RESULT = thToBinaryOP(data=TEST_SCORE, percentile=ANOMALY_RATE)"]
    return ["TEST_SCORE = AnomalDetOP(data=VAL)",
            "THRES = calibrateThreshOP(data=TEST_SCORE)",
            "FINAL_RESULT = convertBinaryOP(data=TEST_SCORE, threshold=THRES)"]


def _causal(task: TaskInstance) -> list[str]:
    ratio = (task.knowledge or {}).get("relation_ratio")
    if ratio is None:
        m = re.search(r"([0-9.]+)% of the variable pairs", task.question)
        ratio = float(m.group(1)) / 100 if m else 0.5
    return [f"PVALS = CausalMatrixOP(data=DATA, max_lag={CAUSAL_MAX_LAG})",
            f"FINAL_RESULT = selectTopRatioOP(data=PVALS, ratio={_num(ratio)})"]


def scripted_propose(task: TaskInstance, feedback_history: Sequence[fb.Feedback], *,
                     use_project: bool = True, faulty_ops: Optional[Mapping[str, str]] = None) -> str:
    """Plan text for ``task`` given the feedback so far (pure function).

    ``faulty_ops`` maps template operator names to replacements used before any
    feedback arrives; it exists to exercise the repair path.
    """
    if task.kind is TaskKind.PREDICTIVE:
        lines = _predictive(task, feedback_history, use_project)
    elif task.kind is TaskKind.DIAGNOSTIC_ANOMALY:
        lines = _anomaly(task)
    elif task.kind is TaskKind.DIAGNOSTIC_CAUSAL:
        lines = _causal(task)
    else:  # pragma: no cover - TaskKind is closed
        raise UnknownTaskKind(str(task.kind))
    if faulty_ops:
        lines = _apply_subs(lines, faulty_ops)
    subs = _substitutions(feedback_history)
    if subs:
        lines = _apply_subs(lines, subs)
    return "\n".join(lines) + "\n"


class ScriptedDecomposer:
    def __init__(self, use_project: bool = True, faulty_ops: Optional[Mapping[str, str]] = None):
        self.use_project = use_project
        self.faulty_ops = dict(faulty_ops or {})

    def propose(self, task: TaskInstance, feedback_history: Sequence[fb.Feedback]) -> str:
        return scripted_propose(task, feedback_history, use_project=self.use_project, faulty_ops=self.faulty_ops)
