"""Prompt assembly for LLM-backed decomposition."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

from .. import feedback as fb
from ..core import TaskInstance
from ..registry import OpDef

FOLLOW_EXAMPLES = (
    "Follow previous examples and answer my last question in the same format as previous "
    "examples within markdown format in ```python```."
)

INSTRUCTIONS = """\
Using only the operators defined in the toolbox above, write the sequence of operator calls \
that answers the question. Reply with the program alone inside one ```python``` block; no prose, \
no custom Python code, and keyword arguments only.
Forecasting operators (*PreOP) are scored after each run with a backtest MAPE (lower is better). \
When the score is too high you may try a different model; if no other model improves on an earlier \
one, go back to the model with the lowest MAPE.
When your program fails you will receive the error and can send a corrected program. Aim for a \
program that runs and satisfies every stated constraint.
Replace every {PLACEHOLDER} with a concrete variable name or value."""


@dataclass(frozen=True)
class PromptBundle:
    operator_defs: str
    icl_examples: tuple[tuple[str, str], ...]
    instructions: str
    question: str
    feedback: tuple[fb.Feedback, ...] = ()

    def render_examples(self) -> str:
        blocks = []
        for q, program in self.icl_examples:
            blocks.append(f"Example:\n\nQuestion:\n{q}\nProgram:\n```python\n{program.rstrip()}\n```")
        return "\n\n".join(blocks)

    def render_base(self) -> str:
        """Everything except feedback: definitions, examples, question, instructions."""
        return "\n\n".join([
            self.operator_defs,
            self.render_examples(),
            f"Question:\n{self.question} {FOLLOW_EXAMPLES}",
            self.instructions,
        ]) + "\n"

    def render(self) -> str:
        text = self.render_base()
        for i, f in enumerate(self.feedback, start=1):
            text += f"\nFeedback {i}:\n```python\n{f.plan.rstrip()}\n```\n{f.message.rstrip()}\n"
        return text

    def to_messages(self) -> list[dict]:
        messages = [
            {"role": "system", "content": self.instructions},
            {"role": "user", "content": self.render_base()},
        ]
        for f in self.feedback:
            messages.append({"role": "assistant", "content": f"```python\n{f.plan.rstrip()}\n```"})
            messages.append({"role": "user", "content": f.message.rstrip()})
        return messages


def render_operator(op: OpDef) -> str:
    lines = [f"def {op.signature()}:", f"    {op.summary}"]
    if op.params:
        lines.append("    Input:")
        for p in op.params:
            doc = f", {p.doc}" if p.doc else ""
            choices = f" (one of: {', '.join(map(str, p.choices))})" if p.choices and p.kind == "text" else ""
            lines.append(f"    - {p.name}: {p.kind}{doc}{choices}")
    lines.append("    Output:")
    lines.append(f"    - {op.returns}")
    return "\n".join(lines)


def render_operator_defs(catalog: Iterable[OpDef]) -> str:
    return "\n\n".join(render_operator(op) for op in catalog)


def load_icl_examples() -> tuple[tuple[str, str], ...]:
    raw = resources.files("tsreasoner").joinpath("data/icl_examples.json").read_text()
    return tuple((e["question"], e["program"]) for e in json.loads(raw))


def build_prompt(task: TaskInstance, feedback_history: Sequence[fb.Feedback], catalog: Iterable[OpDef]) -> PromptBundle:
    ops = list(catalog)
    if not ops:
        raise ValueError("operator catalog is empty")
    return PromptBundle(
        operator_defs=render_operator_defs(ops),
        icl_examples=load_icl_examples(),
        instructions=INSTRUCTIONS,
        question=task.question,
        feedback=tuple(feedback_history),
    )
