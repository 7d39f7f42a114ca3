"""Read path: seeds, ancestor closure, linearisation and the tool-using agent."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import jsonschema
import numpy as np

from . import kernels
from .config import Config
from .errors import MemDagError, ProtocolError, ProviderError, ToolError, UnknownNodeError, ValidationError
from .graph import MemoryGraph
from .model import EffectiveTime
from .providers import templates
from .providers.base import ChatExchange, Provider, estimate_tokens
from .providers.mock import NO_MEMORY
from .providers.schemas import TOOL_ARG_SCHEMAS
from .vector_index import ScoredId

logger = logging.getLogger(__name__)

NO_MEMORY_TEXT = f"{NO_MEMORY}: the store holds no memory entries."

# Optional relevance hook: node id -> priority; higher is admitted first
# within one expansion level when the node budget binds.
Relevance = Callable[[str], float]


@dataclass
class Closure:
    node_ids: set[str]
    seed_ids: list[str]
    truncated: bool
    depth_used: int


@dataclass
class ContextEntry:
    node_id: str
    marker: str
    content: str
    effective_time: EffectiveTime
    kind: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.node_id,
            "marker": self.marker,
            "kind": self.kind,
            "content": self.content,
            "effective_time": self.effective_time.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ContextEntry:
        return cls(d["id"], d["marker"], d["content"], EffectiveTime.from_dict(d["effective_time"]), d["kind"])


@dataclass
class LinearContext:
    entries: list[ContextEntry] = field(default_factory=list)
    token_estimate: int = 0
    truncated: bool = False
    # root is a connectivity anchor; only its presence is reported
    root: bool = False

    def render(self) -> str:
        return "\n".join(
            f"[{e.marker} t={e.effective_time.wall_ms}.{e.effective_time.seq}] {e.content}" for e in self.entries
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "root": self.root,
            "truncated": self.truncated,
            "token_estimate": self.token_estimate,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LinearContext:
        return cls(
            entries=[ContextEntry.from_dict(e) for e in d["entries"]],
            token_estimate=int(d["token_estimate"]),
            truncated=bool(d["truncated"]),
            root=bool(d["root"]),
        )


# ----------------------------------------------------------------------
# closure retrieval


def seed_hits(graph: MemoryGraph, provider: Provider, q: str, k: int, min_sim: float) -> list[ScoredId]:
    vec = provider.embed([q])[0]
    with graph.lock:
        return graph.index.top_k(vec, k, min_score=min_sim)


def seeds(graph: MemoryGraph, provider: Provider, q: str, k: int = 5, min_sim: float = 0.35) -> list[str]:
    """Top-k similar live nodes above ``min_sim``; the root when none qualify."""
    hits = seed_hits(graph, provider, q, k, min_sim)
    return [h.id for h in hits] or [graph.root_id]


def closure(
    graph: MemoryGraph,
    seed_ids: Sequence[str],
    max_depth: int = 16,
    max_nodes: int = 128,
    relevance: Relevance | None = None,
) -> Closure:
    """Backward expansion from the seeds over parent edges.

    ``max_depth`` and ``max_nodes`` (-1 for unbounded) bound the expansion
    levels and the number of ancestors admitted beyond the seeds. Levels
    are admitted whole while the budget allows, nearest first.
    """
    with graph.lock:
        view = graph.view()
        for s in seed_ids:
            if s not in view.index_of:
                raise UnknownNodeError(s)
            if graph.nodes[s].tombstone:
                raise ValidationError(f"seed {s} is tombstoned")
    idx = np.array([view.index_of[s] for s in seed_ids], dtype=np.int64)
    prio = None
    if relevance is not None:
        prio = np.array([relevance(i) if i != view.ids[view.root] else 0.0 for i in view.ids])
    members, truncated, depth = kernels.ancestor_closure(
        view.n, view.parent_ptr, view.parent_idx, view.rank, idx, view.root, max_depth, max_nodes, prio
    )
    return Closure(
        node_ids={view.ids[int(i)] for i in members},
        seed_ids=list(dict.fromkeys(seed_ids)),
        truncated=bool(truncated),
        depth_used=int(depth),
    )


def linearize(graph: MemoryGraph, c: Closure) -> LinearContext:
    seeds_set = set(c.seed_ids)
    with graph.lock:
        nodes = [graph.nodes[i] for i in c.node_ids]
    entries = [
        ContextEntry(
            n.id,
            "seed" if n.id in seeds_set else "ancestor",
            n.content,
            n.effective_time,
            n.kind.value,
        )
        for n in nodes
        if not n.is_root
    ]
    entries.sort(key=lambda e: e.effective_time)
    return LinearContext(
        entries=entries,
        token_estimate=sum(estimate_tokens(e.content) for e in entries),
        truncated=c.truncated,
        root=graph.root_id in c.node_ids,
    )


def retrieve(
    graph: MemoryGraph,
    provider: Provider,
    q: str,
    cfg: Config,
    k: int | None = None,
    depth: int | None = None,
    max_nodes: int | None = None,
    relevance: Relevance | None = None,
) -> LinearContext:
    s = seeds(graph, provider, q, k or cfg.seed_k, cfg.min_sim)
    c = closure(
        graph,
        s,
        cfg.max_depth if depth is None else depth,
        cfg.max_nodes if max_nodes is None else max_nodes,
        relevance,
    )
    return linearize(graph, c)


# ----------------------------------------------------------------------
# tools


class VlmBackend(Protocol):
    def answer(self, asset: str | None, start_s: float, end_s: float, question: str) -> str: ...


class FixtureVlm:
    """Answers visual questions from a fixed table."""

    def __init__(self, table: dict[tuple[str | None, float, float, str], str] | None = None):
        self.table = dict(table or {})

    def answer(self, asset: str | None, start_s: float, end_s: float, question: str) -> str:
        try:
            return self.table[(asset, float(start_s), float(end_s), question)]
        except KeyError:
            raise ToolError(f"no fixture answer for {asset!r} [{start_s}, {end_s}]: {question!r}") from None


def tool_video_retrieval(graph: MemoryGraph, provider: Provider, q: str, k: int = 5) -> list[dict[str, Any]]:
    vec = provider.embed([q])[0]
    with graph.lock:
        hits = graph.index.top_k(vec, k, require_clips=True)
        nodes = {h.id: graph.nodes[h.id] for h in hits}
    out = []
    for h in hits:
        node = nodes[h.id]
        for start, end in node.provenance.clip_refs:
            out.append(
                {"node_id": h.id, "asset": node.provenance.asset, "start_s": start, "end_s": end, "score": h.score}
            )
    return out


def tool_video_rag(graph: MemoryGraph, provider: Provider, q: str, k: int = 5) -> str:
    with graph.lock:
        empty = len(graph.index) == 0 or not graph.live_ids()
    if empty:
        return NO_MEMORY_TEXT
    vec = provider.embed([q])[0]
    with graph.lock:
        hits = graph.index.top_k(vec, k)
        entries = [{"id": h.id, "text": graph.nodes[h.id].content, "score": h.score} for h in hits]
    x = ChatExchange(messages=[("system", templates.RAG), ("user", templates.payload({"query": q, "entries": entries}))])
    return provider.chat(x).response_text or ""


def tool_video_qa(
    backend: VlmBackend | None,
    q: str,
    start_s: float,
    end_s: float,
    asset: str | None = None,
) -> str:
    if backend is None:
        raise ToolError("video.qa has no vision backend configured")
    if not 0 <= start_s <= end_s:
        raise ToolError(f"invalid clip range [{start_s}, {end_s}]")
    return backend.answer(asset, start_s, end_s, q)


class Toolbox:
    """Tool registry bound to one store."""

    def __init__(self, graph: MemoryGraph, provider: Provider, cfg: Config, vlm: VlmBackend | None = None):
        self.graph, self.provider, self.cfg, self.vlm = graph, provider, cfg, vlm
        self.handlers: dict[str, Callable[[dict[str, Any]], Any]] = {
            "video.retrieval": lambda a: tool_video_retrieval(self.graph, self.provider, a["query"], self.cfg.rag_k),
            "video.rag": lambda a: tool_video_rag(self.graph, self.provider, a["query"], self.cfg.rag_k),
            "video.qa": lambda a: tool_video_qa(self.vlm, a["query"], a["start_s"], a["end_s"], a.get("asset")),
        }

    def dispatch(self, name: str, args: dict[str, Any]) -> Any:
        if name not in self.handlers:
            raise ToolError(f"unknown tool {name!r}")
        return self.handlers[name](args)


# ----------------------------------------------------------------------
# agent loop


@dataclass(frozen=True)
class AgentStep:
    action: str
    args: dict[str, Any]
    results: Any

    def to_dict(self) -> dict[str, Any]:
        return {"action": self.action, "args": self.args, "results": self.results}


class AgentHistory:
    def __init__(self, initial_query: str, max_steps: int):
        self._query = initial_query
        self._max = max_steps
        self._steps: list[AgentStep] = []

    @property
    def initial_query(self) -> str:
        return self._query

    @property
    def steps(self) -> tuple[AgentStep, ...]:
        return tuple(self._steps)

    def __len__(self) -> int:
        return len(self._steps)

    def append(self, step: AgentStep) -> None:
        if len(self._steps) >= self._max:
            raise ValidationError(f"history is full ({self._max} steps)")
        self._steps.append(step)

    def to_dict(self) -> dict[str, Any]:
        return {"query": self._query, "steps": [s.to_dict() for s in self._steps]}


@dataclass
class AgentResult:
    answer: str
    history: AgentHistory
    chat_calls: int

    def to_dict(self) -> dict[str, Any]:
        return {"answer": self.answer, "history": self.history.to_dict(), "chat_calls": self.chat_calls}


def _parse_action(reply: ChatExchange) -> tuple[str, dict[str, Any]]:
    name, args = reply.parsed["action"], reply.parsed["args"]
    try:
        jsonschema.validate(args, TOOL_ARG_SCHEMAS[name])
    except jsonschema.ValidationError as exc:
        raise ProtocolError(f"bad arguments for {name}: {exc.message}", reply.response_text) from None
    return name, args


def react_loop(provider: Provider, tools: Toolbox, q: str, max_iterations: int) -> AgentResult:
    """Think-act loop over the tools, then one final answer call.

    At most ``max_iterations`` tool steps run. One malformed action is
    answered with a corrective reprompt; a second one is an error.
    """
    if max_iterations < 1:
        raise ValidationError("max_iterations must be >= 1")
    history = AgentHistory(q, max_iterations)
    calls = 0
    notice: str | None = None
    reprompted = False
    while len(history) < max_iterations:
        state: dict[str, Any] = history.to_dict()
        if notice is not None:
            state["notice"] = notice
        calls += 1
        try:
            name, args = _parse_action(
                provider.chat(
                    ChatExchange(
                        messages=[("system", templates.AGENT), ("user", templates.payload(state))],
                        structured_schema="action",
                    )
                )
            )
        except ProtocolError as exc:
            if reprompted:
                raise
            reprompted = True
            notice = f"previous reply was rejected: {exc}. Reply with one valid action."
            continue
        notice = None
        if name == "finish":
            break
        try:
            results = tools.dispatch(name, args)
        except (ToolError, ProviderError, MemDagError) as exc:
            results = {"error": str(exc)}
        history.append(AgentStep(name, args, results))
    calls += 1
    final = provider.chat(
        ChatExchange(messages=[("system", templates.ANSWER), ("user", templates.payload(history.to_dict()))])
    )
    return AgentResult(final.response_text or "", history, calls)
