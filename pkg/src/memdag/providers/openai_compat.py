"""HTTP client for OpenAI-compatible chat-completion and embedding servers."""

from __future__ import annotations

import logging
import os
import time
from typing import Any

import httpx
import numpy as np

from ..errors import ProtocolError, TransportError
from .base import ChatExchange, Provider

logger = logging.getLogger(__name__)

RETRY_STATUS = {429, 500, 502, 503, 504}


class OpenAICompatProvider(Provider):
    name = "openai"

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        chat_model: str = "default",
        embed_model: str = "default",
        dim: int = 1024,
        extra_body: dict[str, Any] | None = None,
        max_attempts: int = 3,
        backoff_s: float = 0.5,
        timeout_s: float = 60.0,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ):
        super().__init__(dim)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout_s, transport=transport
        )
        self.chat_model = chat_model
        self.embed_model = embed_model
        # opaque backend switches, e.g. disabling reasoning output
        self.extra_body = dict(extra_body or {})
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._sleep = sleep

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None, **kwargs) -> OpenAICompatProvider:
        env = os.environ if env is None else env
        url = env.get("MEM_PROVIDER_URL")
        if not url:
            raise TransportError("MEM_PROVIDER_URL is not set")
        return cls(
            base_url=url,
            api_key=env.get("MEM_PROVIDER_KEY"),
            chat_model=env.get("MEM_CHAT_MODEL", "default"),
            embed_model=env.get("MEM_EMBED_MODEL", "default"),
            dim=int(env.get("MEM_EMBED_DIM", "1024")),
            **kwargs,
        )

    def close(self) -> None:
        self.client.close()

    def _post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self.client.post(path, json=body)
            except httpx.TransportError as exc:
                last = TransportError(f"{path}: {exc}")
                logger.warning("attempt %d on %s failed: %s", attempt + 1, path, exc)
                continue
            if resp.status_code in RETRY_STATUS:
                last = TransportError(f"{path}: HTTP {resp.status_code}")
                logger.warning("attempt %d on %s got HTTP %d", attempt + 1, path, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise ProtocolError(f"{path}: HTTP {resp.status_code}", resp.text)
            try:
                return resp.json()
            except ValueError:
                raise ProtocolError(f"{path}: response is not JSON", resp.text) from None
        assert last is not None
        raise last

    def _complete(self, x: ChatExchange):
        body: dict[str, Any] = {
            "model": self.chat_model,
            "messages": [{"role": r, "content": t} for r, t in x.messages],
            **self.extra_body,
        }
        if x.structured_schema is not None:
            body["response_format"] = {"type": "json_object"}
        t0 = time.perf_counter()
        data = self._post("/chat/completions", body)
        ms = (time.perf_counter() - t0) * 1000.0
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProtocolError("chat response lacks choices[0].message.content", data) from None
        if not isinstance(text, str):
            raise ProtocolError("chat content is not a string", data)
        usage = data.get("usage") or None
        if usage is not None:
            usage = (int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))
        return text, usage, ms

    def _embed(self, texts: list[str]):
        body = {"model": self.embed_model, "input": texts}
        t0 = time.perf_counter()
        data = self._post("/embeddings", body)
        ms = (time.perf_counter() - t0) * 1000.0
        try:
            items = sorted(data["data"], key=lambda d: d.get("index", 0))
            vecs = [np.asarray(d["embedding"], dtype=np.float64) for d in items]
        except (KeyError, TypeError, ValueError):
            raise ProtocolError("embedding response is malformed", data) from None
        if len(vecs) != len(texts):
            raise ProtocolError(f"expected {len(texts)} embeddings, got {len(vecs)}", data)
        usage = data.get("usage") or {}
        tokens = usage.get("prompt_tokens", usage.get("total_tokens"))
        return vecs, None if tokens is None else int(tokens), ms
