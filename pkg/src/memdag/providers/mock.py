"""Deterministic rule-based backend for tests and the replay harness.

Embeddings are hashed bags of content words: every content token sets one
of ``dim`` buckets (chosen by a seeded BLAKE2b hash) and the indicator
vector is L2-normalised. For token sets A and B without bucket collisions
the cosine is ``|A ∩ B| / sqrt(|A| |B|)``, which is at least the overlap
``|A ∩ B| / max(|A|, |B|)``; texts sharing 80% of their content tokens
therefore score at least 0.8, identical texts score exactly 1.0.

Chat responses follow fixed rules keyed by the prompt template:

* summarize: one summary per user/narrator sentence with two or more
  content tokens.
* consolidate / decide: a new item whose content overlaps an existing or
  already-added item by 80% is a no-op; ``CORRECTION:`` rewrites the
  best-matching stored item; ``FORGET:`` deletes it (consolidation only).
* agent: replays ``action_script``; without a script it calls
  ``video.rag`` once and then finishes.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from collections import deque
from typing import Any

import numpy as np

from ..errors import ProviderError
from .base import ChatExchange, Provider, estimate_tokens
from .templates import read_payload

CORRECTION = "CORRECTION:"
FORGET = "FORGET:"
MARKERS = (CORRECTION, FORGET)
DUPLICATE_OVERLAP = 0.8
NO_MEMORY = "NO_MEMORY"

STOPWORDS = frozenset(
    "a an the and or but of to in on at for with from by is are was were be been "
    "am it its this that these those as so do does did has have had my me i i'm "
    "we our you your he she his her they their them just also very really".split()
)
_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")
_SENTENCE = re.compile(r"(?<=[.!?])\s+")
_PROFILE = re.compile(r"^(?:my name|i am|i'm|i live|i work|i was born)\b")


def split_marker(text: str) -> tuple[str | None, str]:
    stripped = text.strip()
    for marker in MARKERS:
        if stripped.upper().startswith(marker):
            return marker, stripped[len(marker) :].strip()
    return None, stripped


def content_tokens(text: str) -> list[str]:
    _, body = split_marker(text)
    return [t for t in _TOKEN.findall(body.lower()) if t not in STOPWORDS]


def overlap(a: str, b: str) -> float:
    ta, tb = set(content_tokens(a)), set(content_tokens(b))
    if not ta or not tb:
        return 1.0 if split_marker(a)[1].lower() == split_marker(b)[1].lower() else 0.0
    return len(ta & tb) / max(len(ta), len(tb))


def jaccard(a: str, b: str) -> float:
    ta, tb = set(content_tokens(a)), set(content_tokens(b))
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def hashed_embedding(text: str, dim: int, seed: int = 0) -> np.ndarray:
    tokens = set(content_tokens(text)) or {split_marker(text)[1].lower() or text}
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokens:
        digest = hashlib.blake2b(f"{seed}:{tok}".encode("utf-8"), digest_size=8).digest()
        vec[int.from_bytes(digest, "little") % dim] = 1.0
    return vec / np.linalg.norm(vec)


def _best_match(text: str, candidates: list[tuple[Any, str]]) -> Any:
    """Key of the candidate sharing the most content; later wins ties."""
    best, best_score = None, 0.0
    for key, other in candidates:
        score = jaccard(text, other)
        if score > 0 and score >= best_score:
            best, best_score = key, score
    return best


def summarize_rule(turn: dict) -> list[dict]:
    out = []
    for msg in turn.get("messages", []):
        if msg.get("role") not in ("user", "narrator"):
            continue
        for sentence in _SENTENCE.split(msg.get("text", "").strip()):
            sentence = sentence.strip()
            if len(content_tokens(sentence)) < 2:
                continue
            body = split_marker(sentence)[1].lower()
            if body.startswith("object:"):
                kind = "object"
            elif _PROFILE.match(body):
                kind = "profile"
            else:
                kind = "event"
            out.append({"text": sentence, "kind": kind})
    return out


def consolidate_rule(members: list[dict]) -> list[dict]:
    actions: dict[int, dict] = {}
    current = {m["index"]: m["text"] for m in members}
    existing = [m for m in members if m["origin"] == "existing"]
    added: list[int] = []
    deleted: set[int] = set()

    def live_existing():
        return [(m["index"], current[m["index"]]) for m in existing if m["index"] not in deleted]

    for m in members:
        if m["origin"] != "new":
            continue
        i = m["index"]
        marker, body = split_marker(m["text"])
        if marker == CORRECTION:
            target = _best_match(body, live_existing())
            if target is not None:
                current[target] = body
                actions[target] = {"verb": "update", "new_content": body}
                actions[i] = {"verb": "noop"}
                continue
            earlier = _best_match(body, [(j, current[j]) for j in added])
            if earlier is not None:
                actions[earlier] = {"verb": "noop"}
                added.remove(earlier)
            actions[i] = {"verb": "add", "new_content": body}
            current[i] = body
            added.append(i)
        elif marker == FORGET:
            target = _best_match(body, live_existing())
            if target is not None:
                deleted.add(target)
                actions[target] = {"verb": "delete"}
            else:
                earlier = _best_match(body, [(j, current[j]) for j in added])
                if earlier is not None:
                    actions[earlier] = {"verb": "noop"}
                    added.remove(earlier)
            actions[i] = {"verb": "noop"}
        else:
            known = live_existing() + [(j, current[j]) for j in added]
            if any(overlap(body, text) >= DUPLICATE_OVERLAP for _, text in known):
                actions[i] = {"verb": "noop"}
            else:
                actions[i] = {"verb": "add", "new_content": body}
                current[i] = body
                added.append(i)
    out = []
    for m in members:
        act = actions.get(m["index"], {"verb": "noop"})
        target = m["ref"] if act["verb"] in ("update", "delete") else None
        out.append(
            {
                "member_index": m["index"],
                "verb": act["verb"],
                "target": target,
                "new_content": act.get("new_content"),
            }
        )
    return out


def decide_rule(candidate: str, related: list[dict]) -> dict:
    marker, body = split_marker(candidate)
    if marker == CORRECTION:
        target = _best_match(body, [(r["id"], r["text"]) for r in reversed(related)])
        if target is not None:
            return {"verb": "update", "target": target, "new_content": body}
        return {"verb": "add", "target": None, "new_content": body}
    if marker == FORGET:
        return {"verb": "noop", "target": None, "new_content": None}
    if any(overlap(body, r["text"]) >= DUPLICATE_OVERLAP for r in related):
        return {"verb": "noop", "target": None, "new_content": None}
    return {"verb": "add", "target": None, "new_content": body}


def answer_rule(state: dict) -> str:
    for step in reversed(state.get("steps", [])):
        results = step.get("results")
        if results:
            text = results if isinstance(results, str) else json.dumps(results, sort_keys=True)
            return "ANSWER: " + text[:400]
    return "ANSWER: unknown"


class MockProvider(Provider):
    name = "mock"

    def __init__(
        self,
        dim: int = 1024,
        seed: int = 0,
        action_script: list[dict] | None = None,
    ):
        super().__init__(dim)
        self.seed = seed
        self.action_script = deque(action_script or [])
        self._queued: dict[str, deque] = {}
        self._lock = threading.Lock()

    def enqueue(self, template: str, *items: str | Exception) -> None:
        """Serve ``items`` (raw text or raised errors) before the rules."""
        with self._lock:
            self._queued.setdefault(template, deque()).extend(items)

    def _take_queued(self, template: str | None):
        with self._lock:
            q = self._queued.get(template or "")
            if q:
                return True, q.popleft()
        return False, None

    def _complete(self, x: ChatExchange):
        template = x.template
        hit, item = self._take_queued(template)
        if hit:
            if isinstance(item, Exception):
                raise item
            text = item
        else:
            text = self._respond(template, x)
        prompt = sum(estimate_tokens(t) for _, t in x.messages)
        completion = estimate_tokens(text)
        # simulated backend latency, deterministic
        ms = 40.0 + 0.01 * prompt + 0.2 * completion
        return text, None, ms

    def _respond(self, template: str | None, x: ChatExchange) -> str:
        user = next((t for r, t in reversed(x.messages) if r == "user"), "")
        if template == "summarize":
            return json.dumps({"summaries": summarize_rule(read_payload(user))})
        if template == "consolidate":
            return json.dumps({"actions": consolidate_rule(read_payload(user)["members"])})
        if template == "decide":
            data = read_payload(user)
            return json.dumps(decide_rule(data["candidate"]["text"], data["related"]))
        if template == "agent":
            return json.dumps(self._next_action(read_payload(user)))
        if template == "answer":
            return answer_rule(read_payload(user))
        if template == "video_rag":
            data = read_payload(user)
            entries = data.get("entries", [])
            lines = [f"SUMMARY of {len(entries)} entries for: {data.get('query', '')}"]
            lines += [f"- {e['text']}" for e in entries]
            return "\n".join(lines)
        raise ProviderError(f"mock has no rule for template {template!r}")

    def _next_action(self, state: dict) -> dict:
        with self._lock:
            if self.action_script:
                return self.action_script.popleft()
        if not state.get("steps"):
            return {"action": "video.rag", "args": {"query": state.get("query", "")}}
        return {"action": "finish", "args": {}}

    def _embed(self, texts: list[str]):
        vecs = [hashed_embedding(t, self.dim, self.seed) for t in texts]
        tokens = sum(estimate_tokens(t) for t in texts)
        return vecs, None, 2.0 + 0.01 * tokens
