"""LLM backends: a deterministic scripted mock and a chat-completions client.

Both expose `complete(messages) -> text` and keep a running token tally so
runs can report cumulative usage. The mock replays a rule list and never
touches the network, which keeps the whole engine testable offline.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, Sequence

import requests


class LlmClient(Protocol):
    def complete(self, messages: Sequence[Mapping[str, str]]) -> str: ...

    @property
    def tokens_used(self) -> int: ...


def _approx_tokens(text: str) -> int:
    return len(text.split())


@dataclass
class MockRule:
    """One scripted reply.

    `match` is a substring that must appear in the last message (None
    matches anything); non-repeating rules are consumed once, in order.
    """

    response: str
    match: Optional[str] = None
    repeat: bool = False
    consumed: bool = field(default=False, compare=False)


class MockLlm:
    """Replays scripted responses keyed by prompt markers.

    Rules are scanned top-down; the first live rule whose marker matches the
    last message wins. With no matching rule the reply is the configured
    default (empty by default), which downstream parsing treats as a
    failed turn.
    """

    def __init__(self, rules: Sequence, default_response: str = ""):
        self.rules = [
            rule if isinstance(rule, MockRule) else MockRule(
                response=rule["response"],
                match=rule.get("match"),
                repeat=bool(rule.get("repeat", False)),
            )
            for rule in rules
        ]
        self.default_response = default_response
        self._tokens = 0
        self.calls = 0

    @classmethod
    def from_spec(cls, spec: Sequence[Mapping]) -> "MockLlm":
        return cls(list(spec))

    @classmethod
    def from_file(cls, path: str) -> "MockLlm":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        spec = doc["rules"] if isinstance(doc, dict) else doc
        return cls.from_spec(spec)

    @property
    def tokens_used(self) -> int:
        return self._tokens

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        self.calls += 1
        prompt = messages[-1]["content"] if messages else ""
        self._tokens += sum(_approx_tokens(m["content"]) for m in messages)
        for rule in self.rules:
            if rule.consumed and not rule.repeat:
                continue
            if rule.match is not None and rule.match not in prompt:
                continue
            rule.consumed = True
            self._tokens += _approx_tokens(rule.response)
            return rule.response
        self._tokens += _approx_tokens(self.default_response)
        return self.default_response


class HttpLlm:
    """Minimal chat-completions client with bounded retries."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: Optional[str] = None,
        api_key_env: str = "EVOHEUR_API_KEY",
        temperature: Optional[float] = None,
        timeout: float = 120.0,
        max_retries: int = 3,
    ):
        if not base_url or not model:
            raise ValueError("base_url and model are required for the http backend")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env, "")
        self.temperature = temperature
        self.timeout = timeout
        self.max_retries = max_retries
        self._tokens = 0
        self.calls = 0

    @property
    def tokens_used(self) -> int:
        return self._tokens

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        payload: dict = {"model": self.model, "messages": list(messages)}
        if self.temperature is not None:
            payload["temperature"] = self.temperature
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Optional[Exception] = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
                if resp.status_code >= 500:
                    raise RuntimeError(f"server error {resp.status_code}")
                resp.raise_for_status()
                doc = resp.json()
                text = doc["choices"][0]["message"]["content"]
                usage = doc.get("usage", {})
                self._tokens += int(
                    usage.get("total_tokens")
                    or usage.get("prompt_tokens", 0) + usage.get("completion_tokens", 0)
                    or _approx_tokens(text)
                )
                self.calls += 1
                return text
            except (requests.RequestException, RuntimeError, KeyError, ValueError) as exc:
                last_error = exc
                time.sleep(min(2.0 ** attempt, 8.0))
        raise RuntimeError(f"LLM request failed after {self.max_retries} attempts: {last_error}")
