"""Gateway for every generative model call.

Three roles exist: "know" (the answerability gate), "dag" (task
decomposition) and "medical" (answer generation). Each role is bound to
a backend, either a remote chat-completion endpoint or a scripted
rule-matching backend for deterministic offline runs. Prompts are
checked against the role's token budget before any backend work.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import requests

from .errors import (
    BackendTimeout,
    BackendUnavailable,
    BudgetExceeded,
    ConfigError,
    NoScriptMatch,
)
from .tokenization import DEFAULT_TOKENIZER, Tokenizer

ROLES = ("know", "dag", "medical")

# Prompt-token ceilings per role; see the pipeline module for how prompts
# are shrunk to fit before they reach the gateway.
DEFAULT_BUDGETS: Mapping[str, int] = {"know": 1024, "dag": 2048, "medical": 2816}


@dataclass(frozen=True)
class CompletionRequest:
    role: str
    prompt: str
    max_output_tokens: int = 256
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}, expected one of {ROLES}")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    output_tokens: int


@dataclass(frozen=True)
class CompletionResult:
    text: str
    usage: Usage


class Backend(Protocol):
    def complete_text(
        self, prompt: str, max_output_tokens: int, temperature: float
    ) -> str: ...


@dataclass
class ScriptedRule:
    """One prompt->response rule. ``matcher`` is a substring unless
    ``regex`` is set; ``consumes`` makes the rule one-shot."""

    matcher: str
    response: str
    consumes: bool = False
    regex: bool = False


class ScriptedBackend:
    """Deterministic backend: first matching rule wins, declaration order."""

    def __init__(self, rules: Sequence[ScriptedRule]) -> None:
        self._rules = list(rules)
        self._used = [False] * len(self._rules)
        self._lock = threading.Lock()

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedBackend":
        rules = []
        try:
            with open(path, "r", encoding="utf-8") as f:
                for line_no, line in enumerate(f, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise ConfigError(
                            "bad scripted-rule line", path=str(path), line=line_no
                        ) from exc
                    rules.append(
                        ScriptedRule(
                            matcher=obj["matcher"],
                            response=obj["response"],
                            consumes=bool(obj.get("consumes", False)),
                            regex=bool(obj.get("regex", False)),
                        )
                    )
        except OSError as exc:
            raise ConfigError(
                f"cannot read scripted rules: {exc}", path=str(path)
            ) from exc
        return cls(rules)

    def complete_text(
        self, prompt: str, max_output_tokens: int, temperature: float
    ) -> str:
        import re as _re

        with self._lock:
            for i, rule in enumerate(self._rules):
                if self._used[i]:
                    continue
                if rule.regex:
                    hit = _re.search(rule.matcher, prompt) is not None
                else:
                    hit = rule.matcher in prompt
                if hit:
                    if rule.consumes:
                        self._used[i] = True
                    return rule.response
        raise NoScriptMatch(
            "no scripted rule matched the prompt", prompt_head=prompt[:120]
        )


class RemoteBackend:
    """Chat-completion HTTP client with bounded retries.

    Retries apply to transport failures only (timeouts, connection
    errors, 5xx); a well-formed reply is never retried. 4xx responses
    and unparseable bodies fail immediately.
    """

    def __init__(
        self,
        url: str,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: Sequence[float] = (0.5, 1.0, 2.0),
        session: requests.Session | None = None,
        sleep=time.sleep,
    ) -> None:
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.backoff = tuple(backoff)
        self._session = session or requests.Session()
        self._sleep = sleep

    @staticmethod
    def _extract_text(body: dict) -> str:
        choices = body.get("choices")
        if isinstance(choices, list) and choices:
            msg = choices[0].get("message")
            if isinstance(msg, dict) and isinstance(msg.get("content"), str):
                return msg["content"]
            if isinstance(choices[0].get("text"), str):
                return choices[0]["text"]
        if isinstance(body.get("text"), str):
            return body["text"]
        raise BackendUnavailable("unrecognized completion response shape")

    def complete_text(
        self, prompt: str, max_output_tokens: int, temperature: float
    ) -> str:
        payload = {
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_output_tokens,
        }
        timed_out = False
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._session.post(self.url, json=payload, timeout=self.timeout)
            except requests.Timeout as exc:
                timed_out, last = True, exc
            except requests.RequestException as exc:
                last = exc
            else:
                if resp.status_code >= 500:
                    last = BackendUnavailable(
                        "server error", url=self.url, status=resp.status_code
                    )
                elif resp.status_code >= 400:
                    raise BackendUnavailable(
                        "request rejected", url=self.url, status=resp.status_code
                    )
                else:
                    try:
                        body = resp.json()
                    except ValueError as exc:
                        raise BackendUnavailable(
                            "non-JSON completion response", url=self.url
                        ) from exc
                    return self._extract_text(body)
            if attempt + 1 < self.retries:
                self._sleep(self.backoff[min(attempt, len(self.backoff) - 1)])
        if timed_out:
            raise BackendTimeout(
                "backend timed out", url=self.url, attempts=self.retries
            ) from last
        raise BackendUnavailable(
            "backend unreachable", url=self.url, attempts=self.retries, cause=str(last)
        )


@dataclass
class CallRecord:
    role: str
    prompt_tokens: int
    output_tokens: int


class ModelGateway:
    """Routes completion requests to per-role backends.

    Enforces the role's prompt budget up front (no backend is touched on
    violation), bounds in-flight calls, and keeps an append-only call log
    that traces and tests can audit.
    """

    def __init__(
        self,
        backends: Mapping[str, Backend],
        budgets: Mapping[str, int] | None = None,
        tokenizer: Tokenizer = DEFAULT_TOKENIZER,
        max_in_flight: int = 4,
    ) -> None:
        unknown = set(backends) - set(ROLES)
        if unknown:
            raise ConfigError("unknown backend role", roles=sorted(unknown))
        self._backends = dict(backends)
        self.budgets = dict(DEFAULT_BUDGETS if budgets is None else budgets)
        for role, limit in self.budgets.items():
            if role not in ROLES:
                raise ConfigError("unknown budget role", role=role)
            if limit < 1:
                raise ConfigError("budget must be positive", role=role, budget=limit)
        self.tokenizer = tokenizer
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._log_lock = threading.Lock()
        self.calls: list[CallRecord] = []

    def backend_for(self, role: str) -> Backend:
        try:
            return self._backends[role]
        except KeyError:
            raise ConfigError("no backend configured for role", role=role) from None

    def complete(self, req: CompletionRequest) -> CompletionResult:
        budget = self.budgets.get(req.role)
        prompt_tokens = self.tokenizer.count(req.prompt)
        if budget is not None and prompt_tokens > budget:
            raise BudgetExceeded(
                "prompt over role budget",
                role=req.role,
                prompt_tokens=prompt_tokens,
                budget=budget,
            )
        backend = self.backend_for(req.role)
        with self._gate:
            text = backend.complete_text(
                req.prompt, req.max_output_tokens, req.temperature
            )
        record = CallRecord(
            role=req.role,
            prompt_tokens=prompt_tokens,
            output_tokens=self.tokenizer.count(text),
        )
        with self._log_lock:
            self.calls.append(record)
        return CompletionResult(text=text, usage=Usage(record.prompt_tokens, record.output_tokens))


def make_backend(spec: str, *, timeout: float = 60.0) -> Backend:
    """Build a backend from its config string.

    ``scripted:<path>`` loads a JSONL rule file; anything starting with
    http(s):// is treated as a remote endpoint.
    """
    if spec.startswith("scripted:"):
        return ScriptedBackend.from_jsonl(spec[len("scripted:") :])
    if spec.startswith(("http://", "https://")):
        return RemoteBackend(spec, timeout=timeout)
    raise ConfigError("unrecognized backend spec", spec=spec)
