from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Any

import jsonschema
import numpy as np

from ..errors import ProtocolError, ProviderError, ValidationError
from ..model import NORM_TOLERANCE
from .schemas import SCHEMAS


def estimate_tokens(text: str) -> int:
    """Whitespace token count; the fallback when a backend reports no usage."""
    return len(text.split())


@dataclass
class ChatExchange:
    messages: list[tuple[str, str]]
    structured_schema: str | None = None
    response_text: str | None = None
    usage: tuple[int, int] = (0, 0)
    parsed: Any = None

    @property
    def template(self) -> str | None:
        for role, text in self.messages:
            if role == "system" and text.startswith("#template:"):
                return text.split("\n", 1)[0][len("#template:") :].strip()
        return None


@dataclass
class ProviderStats:
    chat_calls: int = 0
    embed_calls: int = 0
    failed_calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_ms_total: float = 0.0
    tokens_estimated: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(
        self,
        kind: str,
        prompt_tokens: int = 0,
        completion_tokens: int = 0,
        wall_ms: float = 0.0,
        failed: bool = False,
        estimated: bool = False,
    ) -> None:
        with self._lock:
            if kind == "chat":
                self.chat_calls += 1
            else:
                self.embed_calls += 1
            if failed:
                self.failed_calls += 1
            self.prompt_tokens += prompt_tokens
            self.completion_tokens += completion_tokens
            self.wall_ms_total += wall_ms
            self.tokens_estimated = self.tokens_estimated or estimated

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "chat_calls": self.chat_calls,
                "embed_calls": self.embed_calls,
                "failed_calls": self.failed_calls,
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
                "wall_ms_total": round(self.wall_ms_total, 3),
                "tokens_estimated": self.tokens_estimated,
            }

    def reset(self) -> None:
        with self._lock:
            self.chat_calls = self.embed_calls = self.failed_calls = 0
            self.prompt_tokens = self.completion_tokens = 0
            self.wall_ms_total = 0.0
            self.tokens_estimated = False


def stats_delta(before: dict[str, Any], after: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for key, value in after.items():
        if isinstance(value, bool):
            out[key] = value
        elif isinstance(value, float):
            out[key] = round(value - before.get(key, 0.0), 3)
        else:
            out[key] = value - before.get(key, 0)
    return out


class Provider:
    """Chat + embedding backend with uniform accounting.

    Subclasses implement ``_complete`` and ``_embed``; both may return
    ``None`` for usage/latency, in which case tokens are estimated and
    wall time is measured here.
    """

    name = "base"

    def __init__(self, dim: int):
        self.dim = dim
        self.stats = ProviderStats()

    def _complete(self, x: ChatExchange) -> tuple[str, tuple[int, int] | None, float | None]:
        raise NotImplementedError

    def _embed(self, texts: list[str]) -> tuple[list[np.ndarray], int | None, float | None]:
        raise NotImplementedError

    def chat(self, x: ChatExchange) -> ChatExchange:
        if not x.messages:
            raise ValidationError("chat requires at least one message")
        prompt_est = sum(estimate_tokens(t) for _, t in x.messages)
        t0 = time.perf_counter()
        try:
            text, usage, ms = self._complete(x)
        except ProviderError:
            self.stats.record("chat", prompt_est, 0, _elapsed(t0), failed=True, estimated=True)
            raise
        estimated = usage is None
        if usage is None:
            usage = (prompt_est, estimate_tokens(text))
        wall = _elapsed(t0) if ms is None else ms
        parsed = None
        if x.structured_schema is not None:
            try:
                parsed = parse_structured(text, x.structured_schema)
            except ProtocolError:
                self.stats.record("chat", usage[0], usage[1], wall, failed=True, estimated=estimated)
                raise
        self.stats.record("chat", usage[0], usage[1], wall, estimated=estimated)
        return replace(x, response_text=text, usage=usage, parsed=parsed)

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        if not texts or any(not isinstance(t, str) or not t.strip() for t in texts):
            raise ValidationError("embed requires nonempty strings")
        t0 = time.perf_counter()
        try:
            vecs, tokens, ms = self._embed(list(texts))
        except ProviderError:
            self.stats.record("embed", wall_ms=_elapsed(t0), failed=True)
            raise
        estimated = tokens is None
        if tokens is None:
            tokens = sum(estimate_tokens(t) for t in texts)
        out = []
        for v in vecs:
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (self.dim,):
                self.stats.record("embed", tokens, 0, _elapsed(t0), failed=True, estimated=estimated)
                raise ProtocolError(f"embedding has shape {v.shape}, expected ({self.dim},)")
            norm = float(np.linalg.norm(v))
            if norm == 0.0:
                self.stats.record("embed", tokens, 0, _elapsed(t0), failed=True, estimated=estimated)
                raise ProtocolError("backend returned a zero embedding")
            if abs(norm - 1.0) > NORM_TOLERANCE:
                v = v / norm
            out.append(v)
        self.stats.record("embed", tokens, 0, _elapsed(t0) if ms is None else ms, estimated=estimated)
        return out


def _elapsed(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


def parse_structured(text: str, schema_name: str) -> Any:
    schema = SCHEMAS.get(schema_name)
    if schema is None:
        raise ProtocolError(f"unknown schema {schema_name!r}", text)
    try:
        data = json.loads(text)
    except (TypeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"response is not valid JSON: {exc}", text) from None
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as exc:
        raise ProtocolError(f"response violates {schema_name} schema: {exc.message}", text) from None
    return data
