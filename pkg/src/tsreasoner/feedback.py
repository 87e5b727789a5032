"""Feedback messages exchanged between the executor and a decomposer.

Three line formats, shared by the scripted and LLM decomposers::

    ERROR(step=2, target=THRES, code=UnimplementedOp, message="...")
    QUALITY(model=holt_winters(period=24), mape=0.153012)
    BUFFER_SUMMARY(holt_winters(period=24)=0.153012; ar_ls(ar_order=24)=0.121900)
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

_ERROR_RE = re.compile(r'^ERROR\(step=(-?\d+), target=([^,]*), code=(\w+), message=(".*")\)$')
_QUALITY_RE = re.compile(r"^QUALITY\(model=(.+), mape=([0-9.eE+-]+|inf)\)$")
_BUFFER_RE = re.compile(r"^BUFFER_SUMMARY\((.*)\)$")

BUFFER_INSTRUCTION = (
    "This plan repeats an earlier attempt, so every candidate model has been tried. "
    "Reply with the earlier plan whose model had the lowest MAPE."
)
QUALITY_INSTRUCTION = "MAPE is above the acceptance threshold; try a different forecasting model."
ERROR_INSTRUCTION = "Fix the plan so that it runs."


@dataclass(frozen=True)
class Feedback:
    """One feedback turn: the attempted plan and the executor's reply."""

    plan: str
    message: str

    @property
    def lines(self) -> list[str]:
        return self.message.splitlines()

    def to_dict(self) -> dict:
        return {"plan": self.plan, "message": self.message}


def error_line(step: int, target: str, code: str, message: str) -> str:
    return f"ERROR(step={step}, target={target}, code={code}, message={json.dumps(message)})"


def quality_line(model: str, mape: float) -> str:
    return f"QUALITY(model={model}, mape={mape:.6f})"


def buffer_line(entries: list[tuple[str, float]]) -> str:
    return "BUFFER_SUMMARY(" + "; ".join(f"{m}={q:.6f}" for m, q in entries) + ")"


@dataclass(frozen=True)
class ParsedError:
    step: int
    target: str
    code: str
    message: str


def parse_errors(message: str) -> list[ParsedError]:
    out = []
    for line in message.splitlines():
        m = _ERROR_RE.match(line.strip())
        if m:
            out.append(ParsedError(int(m.group(1)), m.group(2), m.group(3), json.loads(m.group(4))))
    return out


def parse_quality(message: str) -> list[tuple[str, float]]:
    out = []
    for line in message.splitlines():
        m = _QUALITY_RE.match(line.strip())
        if m:
            out.append((m.group(1), float(m.group(2))))
    return out


def parse_buffer(message: str) -> list[tuple[str, float]] | None:
    for line in message.splitlines():
        m = _BUFFER_RE.match(line.strip())
        if m:
            entries = []
            body = m.group(1).strip()
            for part in filter(None, (p.strip() for p in body.split(";"))):
                label, _, value = part.rpartition("=")
                entries.append((label, float(value)))
            return entries
    return None
