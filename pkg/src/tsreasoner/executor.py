"""Plan execution and the refinement loop around a decomposer.

``run_episode`` asks the decomposer for a plan, validates and executes it, and
answers with structured feedback (errors, forecast quality, or a summary of the
buffer of earlier attempts) until a plan is accepted or the budget runs out.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Protocol, Union

from . import feedback as fb
from .core import Quality, TaskInstance, TaskKind, value_kind, value_to_jsonable
from .dsl import (
    Diagnostic,
    Ident,
    ListExpr,
    Num,
    Plan,
    Placeholder,
    Step,
    Str,
    parse_plan,
    serialize_plan,
    validate_plan,
)
from .errors import EndpointError, OpError, PlanSyntaxError, TSReasonerError
from .model_ops import Forecast, backtest
from .registry import Registry, default_registry

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 6
DEFAULT_TAU = 0.1


@dataclass(frozen=True)
class ExecError:
    step_index: int
    op: str
    code: str
    message: str

    def to_dict(self) -> dict:
        return {"step_index": self.step_index, "op": self.op, "code": self.code, "message": self.message}


@dataclass(frozen=True)
class Success:
    result: Any
    bindings: Mapping[str, Any]

    ok = True


@dataclass(frozen=True)
class Failure:
    error: ExecError

    ok = False


ExecOutcome = Union[Success, Failure]


def outcome_summary(outcome: ExecOutcome) -> dict:
    if isinstance(outcome, Success):
        return {"status": "success", "result": value_to_jsonable(outcome.result)}
    return {"status": "failure", "error": outcome.error.to_dict()}


class Decomposer(Protocol):
    def propose(self, task: TaskInstance, feedback_history: list[fb.Feedback]) -> str: ...


# ---------------------------------------------------------------- single plan


def _resolve(expr, scope: Mapping[str, Any]):
    if isinstance(expr, Ident):
        return scope[expr.name]
    if isinstance(expr, (Num, Str)):
        return expr.value
    if isinstance(expr, ListExpr):
        return [_resolve(e, scope) for e in expr.items]
    if isinstance(expr, Placeholder):
        raise OpError(f"placeholder {{{expr.name}}} was not replaced")
    raise TypeError(expr)


def execute_plan(plan: Plan, env: Mapping[str, Any], registry: Registry | None = None) -> ExecOutcome:
    registry = registry or default_registry()
    if not plan.steps:
        return Failure(ExecError(-1, "", "NoResult", "the plan has no steps, so there is no result"))
    bindings: dict[str, Any] = {}
    for i, step in enumerate(plan.steps):
        scope = {**env, **bindings}
        op = registry.lookup(step.op)
        try:
            if op is None:
                raise OpError(f"unknown operator {step.op!r}")
            if not op.implemented:
                raise OpError(f"operator {step.op} is not available")
            missing = [n for e in step.args.values() for n in _idents(e) if n not in scope]
            if missing:
                raise OpError(f"variable(s) {missing} are not defined")
            kwargs = {name: _resolve(e, scope) for name, e in step.args.items()}
            value = registry.call(step.op, kwargs)
        except TSReasonerError as exc:
            code = exc.code
            if op is None:
                code = "UnknownOp"
            elif not op.implemented:
                code = "UnimplementedOp"
            return Failure(ExecError(i, step.op, code, f"{step.target}: {exc}"))
        except Exception as exc:  # numerical library failures must not crash an episode
            log.debug("operator %s raised", step.op, exc_info=True)
            return Failure(ExecError(i, step.op, type(exc).__name__, f"{step.target}: {exc}"))
        bindings[step.target] = value
    return Success(bindings[plan.result_target], bindings)


def _idents(expr):
    if isinstance(expr, Ident):
        yield expr.name
    elif isinstance(expr, ListExpr):
        for e in expr.items:
            yield from _idents(e)


# ---------------------------------------------------------------- quality


def intermediate_quality(step_result: Any, task: TaskInstance) -> Optional[Quality]:
    """Backtest MAPE of the model behind a forecast, on the task's own history."""
    if not isinstance(step_result, Forecast) or task.kind is not TaskKind.PREDICTIVE:
        return None
    history = task.env.get(task.meta.get("history_var", "VAL"))
    if history is None:
        return None
    spec = step_result.model_used
    covariates = task.env.get(task.meta.get("covariate_var", "COV")) if spec.name == "lagged_regression" else None
    try:
        return backtest(history, covariates, len(step_result), spec)
    except OpError:
        return None


def plan_quality(outcome: Success, task: TaskInstance) -> tuple[Optional[str], Optional[Quality]]:
    forecasts = [v for v in outcome.bindings.values() if isinstance(v, Forecast)]
    if not forecasts:
        return None, None
    last = forecasts[-1]
    return last.model_used.label(), intermediate_quality(last, task)


# ---------------------------------------------------------------- episode


@dataclass
class BufferEntry:
    canonical_plan: str
    outcome: ExecOutcome
    quality: Optional[Quality] = None
    model: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "canonical_plan": self.canonical_plan,
            "outcome": outcome_summary(self.outcome)["status"],
            "error": None if isinstance(self.outcome, Success) else self.outcome.error.to_dict(),
            "model": self.model,
            "quality": None if self.quality is None else self.quality.to_dict(),
        }


@dataclass
class Iteration:
    index: int
    plan: str
    canonical_plan: Optional[str]
    diagnostics: list[Diagnostic]
    outcome: Optional[ExecOutcome]
    quality: Optional[Quality]
    model: Optional[str]
    event: str
    feedback_sent: Optional[str]

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "plan": self.plan,
            "canonical_plan": self.canonical_plan,
            "diagnostics": [
                {"severity": d.severity, "step_index": d.step_index, "code": d.code, "message": d.message}
                for d in self.diagnostics
            ],
            "outcome": None if self.outcome is None else outcome_summary(self.outcome),
            "model": self.model,
            "quality": None if self.quality is None else self.quality.to_dict(),
            "event": self.event,
            "feedback_sent": self.feedback_sent,
        }


@dataclass
class EpisodeTrace:
    task_id: str
    budget: int
    iterations: list[Iteration] = field(default_factory=list)
    final: Optional[ExecOutcome] = None
    buffer: list[BufferEntry] = field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return isinstance(self.final, Success)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "budget": self.budget,
            "iterations": [it.to_dict() for it in self.iterations],
            "final": None if self.final is None else outcome_summary(self.final),
            "buffer": [b.to_dict() for b in self.buffer],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _resolved(plan: Plan, registry: Registry) -> Plan:
    """Plan with operator aliases replaced by canonical names (dedup key)."""
    steps = []
    for s in plan.steps:
        op = registry.lookup(s.op)
        steps.append(Step(s.target, op.canonical if op else s.op, s.args, s.line))
    return Plan(tuple(steps))


def _env_kinds(env: Mapping[str, Any]) -> dict[str, str]:
    return {k: value_kind(v) for k, v in env.items()}


def run_episode(task: TaskInstance, decomposer: Decomposer, budget: int = DEFAULT_BUDGET,
                registry: Registry | None = None, tau: float | None = None) -> EpisodeTrace:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    registry = registry or default_registry()
    tau = task.tau if tau is None else tau
    trace = EpisodeTrace(task.id, budget)
    buffer: dict[str, BufferEntry] = {}
    history: list[fb.Feedback] = []
    awaiting_selection = False
    last_failure: Optional[Failure] = None
    env_kinds = _env_kinds(task.env)

    def remember(entry: BufferEntry):
        if entry.canonical_plan not in buffer:
            buffer[entry.canonical_plan] = entry
            trace.buffer.append(entry)

    def send(plan_text: str, message: str) -> str:
        history.append(fb.Feedback(plan_text, message))
        return message

    for it in range(budget):
        try:
            text = decomposer.propose(task, list(history))
        except EndpointError as exc:
            failure = Failure(ExecError(-1, "", exc.code, str(exc)))
            last_failure = failure
            trace.iterations.append(Iteration(it, "", None, [], failure, None, None, "decomposer_error", None))
            continue

        try:
            plan = parse_plan(text)
        except PlanSyntaxError as exc:
            failure = Failure(ExecError(exc.line - 1, "", exc.code, str(exc)))
            last_failure = failure
            msg = send(text, fb.error_line(exc.line - 1, "", exc.code, str(exc)) + "\n" + fb.ERROR_INSTRUCTION)
            trace.iterations.append(Iteration(it, text, None, [], failure, None, None, "syntax_error", msg))
            continue

        canonical = serialize_plan(_resolved(plan, registry))
        diags = validate_plan(plan, task.env.keys(), registry, env_kinds, task.output_contract.variant)
        errors = [d for d in diags if d.severity == "error"]

        if canonical in buffer:
            entry = buffer[canonical]
            if awaiting_selection and isinstance(entry.outcome, Success):
                trace.iterations.append(Iteration(it, text, canonical, diags, entry.outcome, entry.quality,
                                                  entry.model, "selected_from_buffer", None))
                trace.final = entry.outcome
                break
            awaiting_selection = True
            ranked = sorted(((b.model or "plan", b.quality.value) for b in buffer.values()
                             if b.quality is not None), key=lambda mq: mq[1])
            msg = send(canonical, fb.buffer_line(ranked) + "\n" + fb.BUFFER_INSTRUCTION)
            trace.iterations.append(Iteration(it, text, canonical, diags, None, None, None, "duplicate", msg))
            continue

        if errors:
            first = errors[0]
            failure = Failure(ExecError(first.step_index, plan.steps[first.step_index].op, first.code, first.message))
            last_failure = failure
            remember(BufferEntry(canonical, failure))
            lines = [fb.error_line(d.step_index, plan.steps[d.step_index].target, d.code, d.message) for d in errors]
            msg = send(canonical, "\n".join(lines) + "\n" + fb.ERROR_INSTRUCTION)
            trace.iterations.append(Iteration(it, text, canonical, diags, failure, None, None, "invalid", msg))
            continue

        outcome = execute_plan(plan, task.env, registry)
        if isinstance(outcome, Failure):
            last_failure = outcome
            remember(BufferEntry(canonical, outcome))
            e = outcome.error
            target = plan.steps[e.step_index].target if 0 <= e.step_index < len(plan.steps) else ""
            msg = send(canonical, fb.error_line(e.step_index, target, e.code, e.message) + "\n" + fb.ERROR_INSTRUCTION)
            trace.iterations.append(Iteration(it, text, canonical, diags, outcome, None, None, "execution_error", msg))
            continue

        model, quality = (None, None)
        if task.kind is TaskKind.PREDICTIVE:
            model, quality = plan_quality(outcome, task)
        remember(BufferEntry(canonical, outcome, quality, model))
        if quality is None or quality.value <= tau:
            trace.iterations.append(Iteration(it, text, canonical, diags, outcome, quality, model, "accepted", None))
            trace.final = outcome
            break
        msg = send(canonical, fb.quality_line(model, quality.value) + "\n" + fb.QUALITY_INSTRUCTION)
        trace.iterations.append(Iteration(it, text, canonical, diags, outcome, quality, model, "quality_below_target", msg))

    if trace.final is None:
        successes = [b for b in trace.buffer if isinstance(b.outcome, Success)]
        if successes:
            best = min(successes, key=lambda b: b.quality.value if b.quality is not None else float("inf"))
            trace.final = best.outcome
        else:
            trace.final = last_failure or Failure(ExecError(-1, "", "BudgetExhausted", "no plan was proposed"))
    return trace
