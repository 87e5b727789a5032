"""Chat-completions decomposer with record/replay fixtures.

Fixtures live in ``<fixture_dir>/<sha256>.json`` where the hash is taken over
the canonical JSON of the request body, so identical prompts always replay the
same completion.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from .. import feedback as fb
from ..core import TaskInstance
from ..errors import (
    AuthMissing,
    EndpointError,
    EndpointUnreachable,
    NetworkBlocked,
    NoCodeBlockInResponse,
)
from ..registry import Registry, default_registry
from .prompt import build_prompt

log = logging.getLogger(__name__)

DEFAULT_KEY_ENV = "TS_REASONER_API_KEY"
TRANSIENT_STATUS = {408, 409, 429, 500, 502, 503, 504}
_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)

# transport(url, headers, body, timeout) -> (status_code, parsed_json_or_text)
Transport = Callable[[str, dict, dict, float], tuple]


@dataclass
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key_env: str = DEFAULT_KEY_ENV
    mode: str = "replay"  # replay | live | record
    fixture_dir: Optional[Path] = None
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5

    def __post_init__(self):
        if self.mode not in ("replay", "live", "record"):
            raise ValueError(f"unknown endpoint mode {self.mode!r}")
        if self.fixture_dir is not None:
            self.fixture_dir = Path(self.fixture_dir)


def requests_transport(url: str, headers: dict, body: dict, timeout: float) -> tuple:
    import requests

    try:
        resp = requests.post(url, headers=headers, json=body, timeout=timeout)
    except requests.RequestException as exc:
        raise EndpointUnreachable(f"cannot reach {url}: {exc}") from exc
    try:
        payload = resp.json()
    except ValueError:
        payload = resp.text
    return resp.status_code, payload


def blocked_transport(url: str, headers: dict, body: dict, timeout: float) -> tuple:
    raise NetworkBlocked(f"network access is disabled (attempted POST {url})")


def extract_code_block(completion: str) -> str:
    """Inner text of the last fenced block, with exactly one trailing newline."""
    blocks = _FENCE_RE.findall(completion)
    if not blocks:
        raise NoCodeBlockInResponse("the completion contains no fenced code block")
    return blocks[-1].rstrip() + "\n"


def request_hash(body: dict) -> str:
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def completion_text(response: dict) -> str:
    try:
        return response["choices"][0]["message"]["content"] or ""
    except (KeyError, IndexError, TypeError) as exc:
        raise EndpointError(f"malformed chat completion: {exc}") from exc


class LLMDecomposer:
    def __init__(self, config: EndpointConfig, registry: Registry | None = None,
                 transport: Transport | None = None, sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.registry = registry or default_registry()
        self.transport = transport or requests_transport
        self.sleep = sleep

    def build_request(self, task: TaskInstance, feedback_history: Sequence[fb.Feedback]) -> dict:
        bundle = build_prompt(task, feedback_history, self.registry.implemented())
        return {
            "model": self.config.model,
            "messages": bundle.to_messages(),
            "temperature": 0.0,
            "top_p": 1.0,
        }

    def _fixture_path(self, body: dict) -> Optional[Path]:
        if self.config.fixture_dir is None:
            return None
        return self.config.fixture_dir / f"{request_hash(body)}.json"

    def _post(self, body: dict) -> dict:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise AuthMissing(f"environment variable {self.config.api_key_env} is not set")
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        last: Exception | None = None
        for attempt in range(self.config.max_attempts):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                status, payload = self.transport(url, headers, body, self.config.timeout)
            except NetworkBlocked:
                raise
            except EndpointUnreachable as exc:
                last = exc
                continue
            if status == 200 and isinstance(payload, dict):
                return payload
            if status in TRANSIENT_STATUS:
                last = EndpointUnreachable(f"HTTP {status} from {url}")
                continue
            raise EndpointError(f"HTTP {status} from {url}: {str(payload)[:200]}")
        raise EndpointUnreachable(f"giving up after {self.config.max_attempts} attempts: {last}")

    def complete(self, body: dict) -> dict:
        path = self._fixture_path(body)
        if self.config.mode == "replay":
            if path is None or not path.exists():
                raise EndpointUnreachable(f"no replay fixture for request {request_hash(body)}")
            return json.loads(path.read_text())["response"]
        response = self._post(body)
        if self.config.mode == "record" and path is not None:
            write_fixture(path, body, response)
        return response

    def propose(self, task: TaskInstance, feedback_history: Sequence[fb.Feedback]) -> str:
        body = self.build_request(task, feedback_history)
        return extract_code_block(completion_text(self.complete(body)))


def llm_propose(task: TaskInstance, feedback_history: Sequence[fb.Feedback], endpoint_config: EndpointConfig,
                **kwargs) -> str:
    return LLMDecomposer(endpoint_config, **kwargs).propose(task, feedback_history)


def write_fixture(path: Path, body: dict, response: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"request": body, "response": response}, indent=1, sort_keys=True))
    tmp.replace(path)


def fake_completion(content: str, model: str = "replay") -> dict:
    return {
        "id": "chatcmpl-replay",
        "object": "chat.completion",
        "model": model,
        "choices": [{"index": 0, "finish_reason": "stop",
                     "message": {"role": "assistant", "content": content}}],
    }


class FixtureRecorder:
    """Decomposer that answers with a teacher and stores each exchange as an
    LLM replay fixture, so the LLM path can later be replayed offline."""

    def __init__(self, teacher, llm: LLMDecomposer):
        if llm.config.fixture_dir is None:
            raise ValueError("recording needs a fixture_dir")
        self.teacher = teacher
        self.llm = llm

    def propose(self, task: TaskInstance, feedback_history: Sequence[fb.Feedback]) -> str:
        body = self.llm.build_request(task, feedback_history)
        plan = self.teacher.propose(task, feedback_history)
        content = f"```python\n{plan.rstrip()}\n```"
        write_fixture(self.llm._fixture_path(body), body, fake_completion(content, self.llm.config.model))
        return extract_code_block(content)
