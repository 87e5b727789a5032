"""Operator-program language.

A plan is a straight-line list of keyword-only operator calls::

    NORM_SCORE = AnomalDetOP(data=NORM_VAL)
    THRES = calibrateThreshOP(data=NORM_SCORE)

Grammar (one statement per line, blank lines and ``#`` comments ignored)::

    statement := IDENT "=" IDENT "(" [kwarg ("," kwarg)* [","]] ")"
    kwarg     := IDENT "=" expr
    expr      := IDENT | NUMBER | STRING | "[" [expr ("," expr)*] "]" | "{" IDENT "}"

``{NAME}`` is parsed as an unfilled placeholder so the validator can ask for it
to be replaced instead of failing with a syntax error.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

from .errors import PlanSyntaxError

RESULT_NAME = "FINAL_RESULT"


@dataclass(frozen=True)
class Ident:
    name: str


@dataclass(frozen=True)
class Num:
    value: Union[int, float]

    def __eq__(self, other):
        return (isinstance(other, Num) and type(self.value) is type(other.value)
                and self.value == other.value)

    def __hash__(self):
        return hash((type(self.value), self.value))


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class ListExpr:
    items: tuple


@dataclass(frozen=True)
class Placeholder:
    name: str


Expr = Union[Ident, Num, Str, ListExpr, Placeholder]


@dataclass(frozen=True)
class Step:
    target: str
    op: str
    args: Mapping[str, Expr] = field(default_factory=dict)
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Plan:
    steps: tuple[Step, ...] = ()

    def __len__(self):
        return len(self.steps)

    @property
    def result_target(self) -> Optional[str]:
        targets = [s.target for s in self.steps]
        if RESULT_NAME in targets:
            return RESULT_NAME
        return targets[-1] if targets else None

    @property
    def result_index(self) -> Optional[int]:
        target = self.result_target
        if target is None:
            return None
        return max(i for i, s in enumerate(self.steps) if s.target == target)


# ---------------------------------------------------------------- parsing

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")
_FENCE = re.compile(r"^\s*```[A-Za-z0-9_+-]*\s*$")


class _Line:
    def __init__(self, text: str, lineno: int):
        self.text = text
        self.pos = 0
        self.lineno = lineno

    def error(self, msg: str):
        raise PlanSyntaxError(msg, self.lineno, self.pos + 1)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\f\v":
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            found = self.peek() or "end of line"
            self.error(f"expected {ch!r}, found {found!r}")
        self.pos += 1

    def ident(self, what: str) -> str:
        self.skip_ws()
        m = _IDENT.match(self.text, self.pos)
        if not m:
            self.error(f"expected {what}")
        self.pos = m.end()
        return m.group(0)

    def at_end(self) -> bool:
        ch = self.peek()
        return ch == "" or ch == "#"


def _parse_string(line: _Line) -> Str:
    quote = line.text[line.pos]
    i = line.pos + 1
    while i < len(line.text):
        c = line.text[i]
        if c == "\\":
            i += 2
            continue
        if c == quote:
            break
        i += 1
    else:
        line.error("unterminated string literal")
    raw = line.text[line.pos:i + 1]
    try:
        value = json.loads(raw) if quote == '"' else ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        line.error("invalid escape in string literal")
    if not isinstance(value, str):
        line.error("invalid string literal")
    line.pos = i + 1
    return Str(value)


def _parse_expr(line: _Line, depth: int = 0) -> Expr:
    if depth > 32:
        line.error("list nesting too deep")
    ch = line.peek()
    if ch in ("'", '"'):
        return _parse_string(line)
    if ch == "[":
        line.pos += 1
        items = []
        if line.peek() == "]":
            line.pos += 1
            return ListExpr(())
        while True:
            items.append(_parse_expr(line, depth + 1))
            if line.peek() == ",":
                line.pos += 1
                if line.peek() == "]":
                    line.pos += 1
                    break
                continue
            line.expect("]")
            break
        return ListExpr(tuple(items))
    if ch == "{":
        line.pos += 1
        name = line.ident("placeholder name")
        line.expect("}")
        return Placeholder(name)
    m = _NUMBER.match(line.text, line.pos)
    if m and (ch.isdigit() or ch in "+-."):
        text = m.group(0)
        line.pos = m.end()
        if _IDENT.match(line.text, line.pos):
            line.error("malformed number")
        if re.fullmatch(r"[-+]?\d+", text):
            return Num(int(text))
        value = float(text)
        if value != value or value in (float("inf"), float("-inf")):
            line.error("number out of range")
        return Num(value)
    if _IDENT.match(line.text, line.pos):
        return Ident(line.ident("identifier"))
    line.error(f"unexpected {ch!r}" if ch else "expected an argument value")


def _parse_statement(line: _Line) -> Step:
    target = line.ident("assignment target")
    line.expect("=")
    op = line.ident("operator name")
    line.expect("(")
    args: dict[str, Expr] = {}
    if line.peek() != ")":
        while True:
            start = line.pos
            name = line.ident("keyword argument name (positional arguments are not allowed)")
            if line.peek() != "=":
                line.pos = start
                line.error("arguments must be passed by keyword, e.g. data=VAL")
            line.pos += 1
            if name in args:
                line.pos = start
                line.error(f"duplicate argument {name!r}")
            args[name] = _parse_expr(line)
            if line.peek() == ",":
                line.pos += 1
                if line.peek() == ")":
                    break
                continue
            break
    line.expect(")")
    if not line.at_end():
        line.error("unexpected text after statement")
    return Step(target, op, args, line.lineno)


def strip_fences(text: str) -> list[tuple[int, str]]:
    """Numbered lines with surrounding ``` fence lines removed."""
    lines = list(enumerate(text.split("\n"), start=1))
    body = [(n, l) for n, l in lines if l.strip()]
    if body and _FENCE.match(body[0][1]):
        first = body[0][0]
        lines = [(n, l) for n, l in lines if n != first]
        closing = [n for n, l in lines if _FENCE.match(l)]
        if closing:
            lines = [(n, l) for n, l in lines if n < closing[0]]
    return lines


def parse_plan(text: str) -> Plan:
    if not isinstance(text, str):
        raise PlanSyntaxError("plan text must be a string", 1, 1)
    steps = []
    for lineno, raw in strip_fences(text.replace("\\_", "_")):
        line = _Line(raw, lineno)
        if line.at_end():
            continue
        steps.append(_parse_statement(line))
    return Plan(tuple(steps))


# ---------------------------------------------------------------- serialization


def render_expr(e: Expr) -> str:
    if isinstance(e, Ident):
        return e.name
    if isinstance(e, Num):
        return str(e.value) if isinstance(e.value, int) else repr(float(e.value))
    if isinstance(e, Str):
        return json.dumps(e.value, ensure_ascii=False)
    if isinstance(e, ListExpr):
        return "[" + ", ".join(render_expr(i) for i in e.items) + "]"
    if isinstance(e, Placeholder):
        return "{" + e.name + "}"
    raise TypeError(f"not an expression: {e!r}")


def render_step(s: Step) -> str:
    kw = ", ".join(f"{k}={render_expr(v)}" for k, v in sorted(s.args.items()))
    return f"{s.target} = {s.op}({kw})"


def serialize_plan(plan: Plan) -> str:
    """Canonical text: one statement per line, kwargs sorted by name."""
    return "".join(render_step(s) + "\n" for s in plan.steps)


def identifiers(e: Expr) -> Iterable[str]:
    if isinstance(e, Ident):
        yield e.name
    elif isinstance(e, ListExpr):
        for item in e.items:
            yield from identifiers(item)


def placeholders(e: Expr) -> Iterable[str]:
    if isinstance(e, Placeholder):
        yield e.name
    elif isinstance(e, ListExpr):
        for item in e.items:
            yield from placeholders(item)


# ---------------------------------------------------------------- validation

DIAGNOSTIC_CODES = ("UnknownOp", "UnboundVariable", "ArityMismatch", "TypeMismatch",
                    "UnimplementedOp", "DuplicateTarget")


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # error | warning
    step_index: int
    message: str
    code: str

    def __post_init__(self):
        if not self.message:
            raise ValueError("diagnostic message must be non-empty")


def _static_kind(e: Expr, known: Mapping[str, str]) -> str:
    if isinstance(e, Ident):
        return known.get(e.name, "any")
    if isinstance(e, Num):
        return "int" if isinstance(e.value, int) else "float"
    if isinstance(e, Str):
        return "text"
    if isinstance(e, ListExpr):
        return "list"
    return "any"


def validate_plan(plan: Plan, env_names, registry, env_kinds: Mapping[str, str] | None = None,
                  output_variant: str | None = None) -> list[Diagnostic]:
    """Static checks; an empty list means the plan can be executed.

    ``env_kinds`` optionally maps environment names to value kinds so argument
    types of environment variables are checked too.
    """
    from .registry import ACCEPTS, CONTRACT_KINDS

    diags: list[Diagnostic] = []
    kinds: dict[str, str] = {name: "any" for name in env_names}
    if env_kinds:
        kinds.update(env_kinds)
    seen_targets: set[str] = set()

    def err(i, code, msg, severity="error"):
        diags.append(Diagnostic(severity, i, msg, code))

    for i, step in enumerate(plan.steps):
        where = f"step {i} ({step.target})"
        op = registry.lookup(step.op)
        for name, expr in step.args.items():
            for ph in placeholders(expr):
                err(i, "UnboundVariable",
                    f"{where}: argument {name!r} still holds the placeholder {{{ph}}}; "
                    "replace it with a variable name or a literal value")
            for ident in identifiers(expr):
                if ident not in kinds:
                    err(i, "UnboundVariable",
                        f"{where}: variable {ident!r} is not defined by an earlier step or the task data")
        if op is None:
            err(i, "UnknownOp", f"{where}: unknown operator {step.op!r}")
        elif not op.implemented:
            hint = f"; use {op.substitute} instead" if op.substitute else ""
            err(i, "UnimplementedOp", f"{where}: operator {step.op} is not available{hint}")
        else:
            declared = {p.name for p in op.params}
            for name in step.args:
                if name not in declared:
                    err(i, "ArityMismatch",
                        f"{where}: {op.display} has no argument {name!r} (expected {op.signature()})")
            for p in op.params:
                if p.required and p.name not in step.args:
                    err(i, "ArityMismatch", f"{where}: {op.display} is missing argument {p.name!r}")
                if p.name not in step.args:
                    continue
                expr = step.args[p.name]
                sk = _static_kind(expr, kinds)
                ok = sk == "any" or sk in ACCEPTS.get(p.kind, {sk})
                if p.kind == "int" and isinstance(expr, Num) and float(expr.value).is_integer():
                    ok = True
                if p.kind == "number" and sk == "any":
                    ok = True
                if not ok:
                    err(i, "TypeMismatch", f"{where}: argument {p.name!r} of {op.display} expects {p.kind}, got {sk}")
                elif p.choices and isinstance(expr, Str) and expr.value.lower() not in {
                        str(c).lower() for c in p.choices}:
                    err(i, "TypeMismatch",
                        f"{where}: {p.name}={expr.value!r} is not one of {', '.join(map(str, p.choices))}")
        if step.target in seen_targets:
            err(i, "DuplicateTarget", f"{where}: variable {step.target!r} is assigned more than once")
        seen_targets.add(step.target)
        kinds[step.target] = op.returns if op is not None and op.implemented else "any"

    if output_variant and plan.steps:
        idx = plan.result_index
        rk = kinds.get(plan.result_target, "any")
        allowed = CONTRACT_KINDS.get(output_variant, {output_variant})
        if rk != "any" and rk not in allowed:
            err(idx, "TypeMismatch",
                f"result {plan.result_target} is a {rk} but the task expects a {output_variant}", "warning")
    return diags
