"""Write path: dialogue turns to consolidated memory nodes.

The offline batch runs four stages. Stage 1 summarises each turn (parallel
per turn), stage 2 aligns each summary against the store (parallel per
summary), stage 3 clusters the merged candidate pool (single-threaded) and
stage 4 asks the provider for one action per cluster member (parallel per
cluster). Actions are then applied serially by the single writer.

The online step handles one turn: summarise, then align, decide and apply
each summary in order, skipping clustering.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import kernels
from .config import Config
from .errors import ProtocolError, ProviderError, ValidationError
from .graph import MemoryGraph, MutationReport
from .model import EffectiveTime, MemoryKind, MemoryNode, Provenance, SeqClock, make_node_id
from .providers import templates
from .providers.base import ChatExchange, Provider, stats_delta
from .vector_index import SCORE_DECIMALS, ScoredId

logger = logging.getLogger(__name__)

VERBS = ("add", "update", "delete", "noop")
_KIND = {"profile": MemoryKind.PROFILE, "event": MemoryKind.EVENT, "object": MemoryKind.ENTITY_OBJECT}


# ----------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    wall_ms: int


@dataclass(frozen=True)
class MediaRef:
    asset: str
    start_s: float
    end_s: float


@dataclass
class DialogueTurn:
    turn_id: str
    session_id: str
    messages: list[Message]
    media_refs: list[MediaRef] = field(default_factory=list)

    def validate(self) -> None:
        problems = []
        if not self.turn_id:
            problems.append("turn_id must be nonempty")
        if not self.messages:
            problems.append("messages must be nonempty")
        walls = [m.wall_ms for m in self.messages]
        if any(w < 0 for w in walls):
            problems.append("wall_ms must be >= 0")
        if any(b < a for a, b in zip(walls, walls[1:])):
            problems.append("wall_ms must be nondecreasing within a turn")
        for ref in self.media_refs:
            if ref.start_s < 0 or ref.start_s > ref.end_s:
                problems.append(f"media ref ({ref.start_s}, {ref.end_s}) is not a valid range")
        if problems:
            raise ValidationError(f"invalid turn {self.turn_id!r}", problems)

    @property
    def last_wall_ms(self) -> int:
        return self.messages[-1].wall_ms

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "turn_id": self.turn_id,
            "session_id": self.session_id,
            "messages": [{"role": m.role, "text": m.text, "wall_ms": m.wall_ms} for m in self.messages],
        }
        if self.media_refs:
            out["media_refs"] = [
                {"asset": r.asset, "start_s": r.start_s, "end_s": r.end_s} for r in self.media_refs
            ]
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DialogueTurn:
        try:
            turn = cls(
                turn_id=str(d["turn_id"]),
                session_id=str(d.get("session_id", "")),
                messages=[Message(str(m["role"]), str(m["text"]), int(m["wall_ms"])) for m in d["messages"]],
                media_refs=[
                    MediaRef(str(r["asset"]), float(r["start_s"]), float(r["end_s"]))
                    for r in d.get("media_refs") or []
                ],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed turn: {exc!r}") from None
        turn.validate()
        return turn


@dataclass
class Summary:
    text: str
    source_turn_id: str
    position: int
    proposed_kind: MemoryKind
    proposed_time: EffectiveTime
    embedding: np.ndarray
    provenance: Provenance
    attributes: dict[str, Any] = field(default_factory=dict)

    @property
    def ref(self) -> str:
        return f"{self.source_turn_id}#{self.position}"


@dataclass
class PoolItem:
    origin: str  # "new" | "existing"
    ref: str
    embedding: np.ndarray
    text: str
    time: EffectiveTime
    summary: Summary | None = None


@dataclass
class Cluster:
    members: list[PoolItem]

    @property
    def has_new(self) -> bool:
        return any(m.origin == "new" for m in self.members)


@dataclass
class ConsolidationAction:
    verb: str
    target: str | None = None
    new_content: str | None = None
    summary: Summary | None = None

    def __post_init__(self) -> None:
        if self.verb not in VERBS:
            raise ValidationError(f"unknown verb {self.verb!r}")
        if self.verb in ("update", "delete") and not self.target:
            raise ValidationError(f"{self.verb} needs a target")
        if self.verb in ("add", "noop") and self.target is not None:
            raise ValidationError(f"{self.verb} takes no target")
        if self.verb in ("add", "update") and not (self.new_content and self.new_content.strip()):
            raise ValidationError(f"{self.verb} needs new content")
        if self.verb == "add" and self.summary is None:
            raise ValidationError("add needs its source summary")


@dataclass
class WriteContext:
    graph: MemoryGraph
    provider: Provider
    cfg: Config
    clock: SeqClock
    # called after each action so storage can log it as one atomic group
    commit: Callable[[], None] | None = None


@dataclass
class ApplyReport:
    counts: dict[str, int] = field(default_factory=lambda: {v: 0 for v in VERBS})
    added: list[str] = field(default_factory=list)
    updated: list[str] = field(default_factory=list)
    deleted: list[str] = field(default_factory=list)
    reinserts: int = 0
    orphans: int = 0
    mutations: list[MutationReport] = field(default_factory=list)

    def merge(self, other: ApplyReport) -> None:
        for v in VERBS:
            self.counts[v] += other.counts[v]
        self.added += other.added
        self.updated += other.updated
        self.deleted += other.deleted
        self.reinserts += other.reinserts
        self.orphans += other.orphans
        self.mutations += other.mutations

    def to_dict(self) -> dict[str, Any]:
        return {
            "actions": dict(self.counts),
            "added": list(self.added),
            "updated": list(self.updated),
            "deleted": list(self.deleted),
            "reinserts": self.reinserts,
            "orphans": self.orphans,
        }


@dataclass
class Carry:
    """Work that failed after retries and must run in the next batch."""

    turns: list[DialogueTurn] = field(default_factory=list)
    summaries: list[Summary] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.turns or self.summaries)


@dataclass
class BatchReport:
    turns: int = 0
    summaries: int = 0
    pool_size: int = 0
    clusters: int = 0
    skipped_clusters: int = 0
    apply: ApplyReport = field(default_factory=ApplyReport)
    stages: dict[str, dict[str, Any]] = field(default_factory=dict)
    carried_turns: list[str] = field(default_factory=list)
    carried_summaries: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "turns": self.turns,
            "summaries": self.summaries,
            "pool_size": self.pool_size,
            "clusters": self.clusters,
            "skipped_clusters": self.skipped_clusters,
            **self.apply.to_dict(),
            "stages": self.stages,
            "carried_turns": list(self.carried_turns),
            "carried_summaries": list(self.carried_summaries),
        }


@dataclass
class StepReport:
    turn_id: str
    summaries: int = 0
    decisions: list[dict[str, Any]] = field(default_factory=list)
    apply: ApplyReport = field(default_factory=ApplyReport)
    stats: dict[str, Any] = field(default_factory=dict)
    failed: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "turn_id": self.turn_id,
            "summaries": self.summaries,
            "decisions": list(self.decisions),
            **self.apply.to_dict(),
            "stats": self.stats,
            "failed": list(self.failed),
        }


# ----------------------------------------------------------------------
# stage operations


def _summary_attributes(kind: MemoryKind, turn: DialogueTurn, text: str) -> dict[str, Any]:
    if kind is MemoryKind.PROFILE:
        return {"subject": turn.session_id or "user"}
    if kind is MemoryKind.ENTITY_OBJECT:
        first = turn.media_refs[0].start_s if turn.media_refs else turn.messages[0].wall_ms / 1000.0
        return {"identity": text, "first_observed_s": float(first)}
    return {}


def summarize_turn(provider: Provider, turn: DialogueTurn) -> list[Summary]:
    turn.validate()
    x = ChatExchange(
        messages=[("system", templates.SUMMARIZE), ("user", templates.payload(turn.to_dict()))],
        structured_schema="summaries",
    )
    parsed = provider.chat(x).parsed
    items = [s for s in parsed["summaries"] if s["text"].strip()]
    if not items:
        return []
    vecs = provider.embed([s["text"] for s in items])
    roles: list[str] = []
    for m in turn.messages:
        if m.role not in roles:
            roles.append(m.role)
    clips = [(r.start_s, r.end_s) for r in turn.media_refs]
    asset = turn.media_refs[0].asset if turn.media_refs else None
    out = []
    for pos, (item, vec) in enumerate(zip(items, vecs)):
        kind = _KIND[item.get("kind", "event")]
        if clips and kind is MemoryKind.PROFILE:
            kind = MemoryKind.EVENT
        out.append(
            Summary(
                text=item["text"].strip(),
                source_turn_id=turn.turn_id,
                position=pos,
                proposed_kind=kind,
                proposed_time=EffectiveTime(turn.last_wall_ms, 0),
                embedding=vec,
                provenance=Provenance(
                    source_turn_ids=[turn.turn_id],
                    roles=list(roles),
                    clip_refs=list(clips),
                    session_id=turn.session_id,
                    asset=asset,
                ),
                attributes=_summary_attributes(kind, turn, item["text"].strip()),
            )
        )
    return out


def align(graph: MemoryGraph, s: Summary, k: int) -> list[ScoredId]:
    """Most similar live stored nodes, from any era."""
    return graph.index.top_k(s.embedding, k)


def build_pool(
    summaries: Sequence[Summary],
    retrieval_sets: Sequence[Sequence[ScoredId]],
    graph: MemoryGraph,
) -> list[PoolItem]:
    items: list[PoolItem] = []
    seen: set[str] = set()
    for s in summaries:
        if s.ref not in seen:
            seen.add(s.ref)
            items.append(PoolItem("new", s.ref, s.embedding, s.text, s.proposed_time, s))
    for hits in retrieval_sets:
        for h in hits:
            if h.id in seen:
                continue
            seen.add(h.id)
            node = graph.node(h.id)
            items.append(PoolItem("existing", h.id, node.embedding, node.content, node.effective_time))
    return items


def _member_key(item: PoolItem, pos: int) -> tuple:
    # existing items precede new ones proposed for the same instant
    return (item.time.wall_ms, 0 if item.origin == "existing" else 1, item.time.seq, pos)


def cluster_pool(items: Sequence[PoolItem], theta: float) -> list[Cluster]:
    """Threshold connected components, members in effective-time order."""
    if not items:
        return []
    mat = np.stack([np.asarray(i.embedding, dtype=np.float64) for i in items])
    sim = np.round(mat @ mat.T, SCORE_DECIMALS)
    labels = kernels.threshold_components(sim, theta)
    groups: dict[int, list[int]] = {}
    for pos, lab in enumerate(labels.tolist()):
        groups.setdefault(lab, []).append(pos)
    clusters = []
    for positions in groups.values():
        positions.sort(key=lambda p: _member_key(items[p], p))
        clusters.append((_member_key(items[positions[0]], positions[0]), [items[p] for p in positions]))
    clusters.sort(key=lambda c: c[0])
    return [Cluster(members) for _, members in clusters]


def _members_payload(c: Cluster) -> list[dict[str, Any]]:
    return [
        {
            "index": i,
            "origin": m.origin,
            "ref": m.ref,
            "text": m.text,
            "time": [m.time.wall_ms, m.time.seq],
        }
        for i, m in enumerate(c.members)
    ]


def consolidate(provider: Provider, c: Cluster) -> list[ConsolidationAction]:
    if not c.members:
        raise ValidationError("cannot consolidate an empty cluster")
    x = ChatExchange(
        messages=[
            ("system", templates.CONSOLIDATE),
            ("user", templates.payload({"members": _members_payload(c)})),
        ],
        structured_schema="consolidation",
    )
    reply = provider.chat(x)
    return _validate_consolidation(c, reply.parsed, reply.response_text)


def _validate_consolidation(c: Cluster, parsed: dict, raw: str | None) -> list[ConsolidationAction]:
    actions = parsed["actions"]
    by_index: dict[int, dict] = {}
    for a in actions:
        i = a["member_index"]
        if i >= len(c.members) or i in by_index:
            raise ProtocolError(f"action for invalid or repeated member {i}", raw)
        by_index[i] = a
    if len(by_index) != len(c.members):
        raise ProtocolError(f"expected {len(c.members)} actions, got {len(actions)}", raw)
    out = []
    for i, m in enumerate(c.members):
        a = by_index[i]
        verb, target, content = a["verb"], a.get("target"), a.get("new_content")
        if m.origin == "new":
            if verb not in ("add", "noop"):
                raise ProtocolError(f"new member {i} cannot take verb {verb!r}", raw)
            if target is not None:
                raise ProtocolError(f"new member {i} must not name a target", raw)
        else:
            if verb not in ("update", "delete", "noop"):
                raise ProtocolError(f"existing member {i} cannot take verb {verb!r}", raw)
            if verb != "noop" and target != m.ref:
                raise ProtocolError(f"member {i} targets unknown id {target!r}", raw)
            if verb == "noop":
                target = None
        if verb in ("add", "update") and not (content and content.strip()):
            raise ProtocolError(f"member {i}: {verb} needs new_content", raw)
        out.append(
            ConsolidationAction(
                verb,
                target,
                content.strip() if verb in ("add", "update") else None,
                m.summary if verb == "add" else None,
            )
        )
    return out


def _action_key(graph: MemoryGraph, a: ConsolidationAction) -> tuple[int, int]:
    if a.verb == "add":
        assert a.summary is not None
        return a.summary.proposed_time.as_tuple()
    if a.target is not None:
        return graph.node(a.target).effective_time.as_tuple()
    return (0, 0)


def apply_actions(ctx: WriteContext, actions: Sequence[ConsolidationAction]) -> ApplyReport:
    """Apply actions in effective-time order of their targets."""
    report = ApplyReport()
    g = ctx.graph
    ordered = sorted(enumerate(actions), key=lambda ia: (_action_key(g, ia[1]), ia[0]))
    # one embed call for every rewritten text; unchanged texts reuse vectors
    fresh: list[str] = []
    for _, a in ordered:
        if a.verb == "add" and a.new_content != a.summary.text:
            fresh.append(a.new_content)
        elif a.verb == "update":
            fresh.append(a.new_content)
    vectors = dict(zip(fresh, ctx.provider.embed(fresh))) if fresh else {}
    for _, a in ordered:
        report.counts[a.verb] += 1
        if a.verb == "noop":
            continue
        if a.verb == "add":
            s = a.summary
            seq = ctx.clock.next()
            emb = s.embedding if a.new_content == s.text else vectors[a.new_content]
            node = MemoryNode(
                id=make_node_id(s.source_turn_id, s.position, seq),
                kind=s.proposed_kind,
                content=a.new_content,
                embedding=emb,
                effective_time=EffectiveTime(s.proposed_time.wall_ms, seq),
                provenance=s.provenance,
                attributes=dict(s.attributes),
            )
            g.insert(node)
            report.added.append(node.id)
        elif a.verb == "update":
            m = g.apply_update(a.target, a.new_content, vectors[a.new_content])
            report.updated.append(a.target)
            report.reinserts += m.reinsert_count
            report.mutations.append(m)
        else:
            m = g.apply_delete(a.target)
            report.deleted.append(a.target)
            report.reinserts += m.reinsert_count
            report.orphans += len(m.orphans)
            report.mutations.append(m)
        if ctx.commit is not None:
            ctx.commit()
    return report


# ----------------------------------------------------------------------
# drivers


def _with_retries(fn: Callable[[], Any], retries: int, what: str) -> Any:
    """Run ``fn`` up to ``1 + retries`` times; re-raise the last failure."""
    for attempt in range(retries + 1):
        try:
            return fn()
        except ProviderError as exc:
            logger.warning("%s failed (attempt %d/%d): %s", what, attempt + 1, retries + 1, exc)
            if attempt == retries:
                raise
    raise AssertionError("unreachable")


def _try(fn: Callable[[], Any], retries: int, what: str) -> tuple[bool, Any]:
    try:
        return True, _with_retries(fn, retries, what)
    except ProviderError:
        return False, None


def offline_batch(
    ctx: WriteContext,
    turns: Sequence[DialogueTurn],
    carry: Carry | None = None,
) -> tuple[BatchReport, Carry]:
    """Run the four-stage batch; returns the report and the next carry."""
    cfg, provider, g = ctx.cfg, ctx.provider, ctx.graph
    carry = carry or Carry()
    all_turns = list(carry.turns) + list(turns)
    for t in all_turns:
        t.validate()
    report = BatchReport(turns=len(all_turns))
    nxt = Carry()
    if not all_turns and not carry.summaries:
        return report, nxt

    def stage(name: str, fn: Callable[[], Any]) -> Any:
        before = provider.stats.snapshot()
        t0 = time.perf_counter()
        out = fn()
        report.stages[name] = stats_delta(before, provider.stats.snapshot())
        logger.debug("stage %s took %.1f ms", name, (time.perf_counter() - t0) * 1000)
        return out

    workers = max(1, cfg.workers)

    def run_summaries() -> list[tuple[bool, Any]]:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(
                pool.map(
                    lambda t: _try(lambda: summarize_turn(provider, t), cfg.retries, f"summarize {t.turn_id}"),
                    all_turns,
                )
            )

    results = stage("summarize", run_summaries)
    summaries: list[Summary] = list(carry.summaries)
    for t, (ok, out) in zip(all_turns, results):
        if ok:
            summaries.extend(out)
        else:
            nxt.turns.append(t)
    report.summaries = len(summaries)

    def run_align() -> list[list[ScoredId]]:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda s: align(g, s, cfg.align_k), summaries))

    retrievals = stage("align", run_align)
    pool_items = build_pool(summaries, retrievals, g)
    report.pool_size = len(pool_items)
    clusters = stage("cluster", lambda: cluster_pool(pool_items, cfg.theta))
    # clusters of stored nodes only have nothing new to reconcile
    todo = [c for c in clusters if c.has_new]
    report.clusters = len(todo)
    report.skipped_clusters = len(clusters) - len(todo)

    def run_consolidate() -> list[tuple[bool, Any]]:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(
                pool.map(lambda c: _try(lambda: consolidate(provider, c), cfg.retries, "consolidate"), todo)
            )

    outcomes = stage("consolidate", run_consolidate)
    actions: list[ConsolidationAction] = []
    for c, (ok, acts) in zip(todo, outcomes):
        if ok:
            actions.extend(acts)
        else:
            nxt.summaries.extend(m.summary for m in c.members if m.origin == "new")
    report.apply = stage("apply", lambda: apply_actions(ctx, actions))
    report.carried_turns = [t.turn_id for t in nxt.turns]
    report.carried_summaries = [s.ref for s in nxt.summaries]
    return report, nxt


def decide(provider: Provider, s: Summary, related: Sequence[ScoredId], graph: MemoryGraph) -> ConsolidationAction:
    payload = {
        "candidate": {"ref": s.ref, "text": s.text},
        "related": [{"id": r.id, "text": graph.node(r.id).content, "score": r.score} for r in related],
    }
    x = ChatExchange(
        messages=[("system", templates.DECIDE), ("user", templates.payload(payload))],
        structured_schema="decision",
    )
    reply = provider.chat(x)
    d, raw = reply.parsed, reply.response_text
    verb, target, content = d["verb"], d.get("target"), d.get("new_content")
    if verb == "update" and target not in {r.id for r in related}:
        raise ProtocolError(f"decision targets unknown id {target!r}", raw)
    if verb in ("add", "update") and not (content and content.strip()):
        raise ProtocolError(f"{verb} decision needs new_content", raw)
    if verb == "add":
        return ConsolidationAction("add", None, content.strip(), s)
    if verb == "update":
        return ConsolidationAction("update", target, content.strip())
    return ConsolidationAction("noop")


def online_step(
    ctx: WriteContext,
    turn: DialogueTurn | None,
    pending: Sequence[Summary] = (),
) -> tuple[StepReport, list[Summary]]:
    """Process one turn; returns the report and summaries that failed."""
    cfg, provider, g = ctx.cfg, ctx.provider, ctx.graph
    before = provider.stats.snapshot()
    report = StepReport(turn.turn_id if turn is not None else "")
    summaries = list(pending)
    if turn is not None:
        summaries += _with_retries(lambda: summarize_turn(provider, turn), cfg.retries, f"summarize {turn.turn_id}")
    report.summaries = len(summaries)
    failed: list[Summary] = []
    for s in summaries:
        related = align(g, s, cfg.align_k)
        try:
            action = _with_retries(lambda: decide(provider, s, related, g), cfg.retries, f"decide {s.ref}")
        except ProviderError as exc:
            logger.warning("candidate %s left for later: %s", s.ref, exc)
            failed.append(s)
            report.failed.append(s.ref)
            continue
        applied = apply_actions(ctx, [action])
        node_id = applied.added[0] if applied.added else action.target
        report.decisions.append({"ref": s.ref, "verb": action.verb, "node_id": node_id})
        report.apply.merge(applied)
    report.stats = stats_delta(before, provider.stats.snapshot())
    return report, failed
