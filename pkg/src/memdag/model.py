"""Node and edge data model, effective-time ordering and node validation."""

from __future__ import annotations

import itertools
import threading
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

NORM_TOLERANCE = 1e-6
ID_NAMESPACE = uuid.UUID("6f3c1a52-8d0e-4c6b-9a51-2f6f0c4d7e10")


@dataclass(frozen=True, order=True)
class EffectiveTime:
    """Strict total order key: wall clock first, store sequence second."""

    wall_ms: int
    seq: int

    def as_tuple(self) -> tuple[int, int]:
        return (self.wall_ms, self.seq)

    def to_dict(self) -> dict[str, int]:
        return {"wall_ms": self.wall_ms, "seq": self.seq}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EffectiveTime:
        return cls(int(d["wall_ms"]), int(d["seq"]))


ROOT_TIME = EffectiveTime(0, 0)


def time_less(a: EffectiveTime, b: EffectiveTime) -> bool:
    return (a.wall_ms, a.seq) < (b.wall_ms, b.seq)


class MemoryKind(str, Enum):
    PROFILE = "profile"
    EVENT = "event"
    ENTITY_OBJECT = "object"
    ROOT = "root"


@dataclass
class Provenance:
    source_turn_ids: list[str] = field(default_factory=list)
    roles: list[str] = field(default_factory=list)
    clip_refs: list[tuple[float, float]] = field(default_factory=list)
    session_id: str | None = None
    asset: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "turn_ids": list(self.source_turn_ids),
            "roles": list(self.roles),
            "clip_refs": [[float(s), float(e)] for s, e in self.clip_refs],
            "asset": self.asset,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Provenance:
        return cls(
            source_turn_ids=[str(t) for t in d.get("turn_ids") or []],
            roles=[str(r) for r in d.get("roles") or []],
            clip_refs=[(float(s), float(e)) for s, e in d.get("clip_refs") or []],
            session_id=d.get("session_id"),
            asset=d.get("asset"),
        )


@dataclass
class MemoryNode:
    id: str
    kind: MemoryKind
    content: str
    embedding: np.ndarray
    effective_time: EffectiveTime
    provenance: Provenance = field(default_factory=Provenance)
    tombstone: bool = False
    # free-form per-kind fields (profile subject, object identity, ...)
    attributes: dict[str, Any] = field(default_factory=dict)

    @property
    def is_root(self) -> bool:
        return self.kind is MemoryKind.ROOT

    @property
    def has_clips(self) -> bool:
        return bool(self.provenance.clip_refs)


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str


def new_root(dim: int, node_id: str = "root") -> MemoryNode:
    return MemoryNode(
        id=node_id,
        kind=MemoryKind.ROOT,
        content="",
        embedding=np.zeros(dim, dtype=np.float64),
        effective_time=ROOT_TIME,
    )


def make_node_id(*parts: object) -> str:
    """Deterministic UUID derived from the given parts."""
    return str(uuid.uuid5(ID_NAMESPACE, "/".join(str(p) for p in parts)))


def validate_node(n: MemoryNode) -> list[str]:
    """Return every violated node invariant; an empty list means ok."""
    violations: list[str] = []
    if n.kind is MemoryKind.ROOT:
        if n.effective_time != ROOT_TIME:
            violations.append("root sentinel: root must carry effective time (0, 0)")
        if n.content:
            violations.append("root content: root content must be empty")
    else:
        if not n.content or not n.content.strip():
            violations.append("content nonempty: non-root node has empty content")
        if n.effective_time == ROOT_TIME or n.effective_time.seq <= 0:
            violations.append("effective time: non-root node needs seq > 0")
        emb = np.asarray(n.embedding, dtype=np.float64)
        if emb.ndim != 1 or emb.size == 0:
            violations.append("embedding shape: expected a 1-d vector")
        elif not np.all(np.isfinite(emb)):
            violations.append("embedding finite: embedding contains nan/inf")
        elif abs(float(np.linalg.norm(emb)) - 1.0) > NORM_TOLERANCE:
            violations.append("embedding norm: embedding must be unit length")
    for start, end in n.provenance.clip_refs:
        if start < 0 or start > end:
            violations.append(f"clip range: invalid clip ({start}, {end})")
    if n.provenance.clip_refs and n.kind not in (MemoryKind.EVENT, MemoryKind.ENTITY_OBJECT):
        violations.append("clip kind: clip_refs only allowed on event/object nodes")
    return violations


class SeqClock:
    """Store-wide monotone sequence counter."""

    def __init__(self, start: int = 1):
        self._lock = threading.Lock()
        self._counter = itertools.count(start)
        self._last = start - 1

    def next(self) -> int:
        with self._lock:
            self._last = next(self._counter)
            return self._last

    @property
    def last(self) -> int:
        return self._last

    def advance_past(self, seq: int) -> None:
        with self._lock:
            if seq > self._last:
                self._counter = itertools.count(seq + 1)
                self._last = seq
