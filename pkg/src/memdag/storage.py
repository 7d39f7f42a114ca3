"""Durability: write-ahead log, binary snapshots and JSONL record exchange.

WAL file: a sequence of frames ``[u32 length][u32 crc32][group JSON]``.
Each frame holds one atomic mutation group, a list of entries
``{"lsn", "op", "payload"}``. A frame cut short at the end of the file is
a torn write and is dropped; a complete frame with a bad checksum stops
the load.

Snapshot file: ``MDSNAP1\\n`` followed by sections
``[u16 name length][name][u64 length][u32 crc32][bytes]``: ``meta`` (JSON),
``nodes`` (JSONL, embeddings excluded), ``embeddings`` (little-endian
float64, one row per node in ``nodes`` order) and ``edges`` (JSON pairs).
"""

from __future__ import annotations

import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator

import jsonschema
import numpy as np

from .errors import ChecksumError, RecordError, StorageError
from .graph import MemoryGraph
from .model import EffectiveTime, MemoryKind, MemoryNode, Provenance

logger = logging.getLogger(__name__)

MAGIC = b"MDSNAP1\n"
_FRAME = struct.Struct("<II")
_NAME = struct.Struct("<H")
_SECTION = struct.Struct("<QI")
WAL_NAME = "wal.log"
SNAPSHOT_NAME = "snapshot.bin"


# ----------------------------------------------------------------------
# node (de)serialisation shared by WAL, snapshot and JSONL


def node_to_dict(n: MemoryNode, embedding: bool = True) -> dict[str, Any]:
    d: dict[str, Any] = {
        "id": n.id,
        "kind": n.kind.value,
        "content": n.content,
        "effective_time": n.effective_time.to_dict(),
        "provenance": n.provenance.to_dict(),
        "tombstone": n.tombstone,
        "attributes": n.attributes,
    }
    if embedding:
        d["embedding"] = np.asarray(n.embedding, dtype=np.float64).tolist()
    return d


def node_from_dict(d: dict[str, Any], embedding: np.ndarray | None = None) -> MemoryNode:
    vec = embedding if embedding is not None else np.asarray(d["embedding"], dtype=np.float64)
    return MemoryNode(
        id=d["id"],
        kind=MemoryKind(d["kind"]),
        content=d["content"],
        embedding=vec,
        effective_time=EffectiveTime.from_dict(d["effective_time"]),
        provenance=Provenance.from_dict(d.get("provenance") or {}),
        tombstone=bool(d.get("tombstone", False)),
        attributes=dict(d.get("attributes") or {}),
    )


def _encode_payload(op: str, payload: Any) -> Any:
    if op == "add_node":
        return node_to_dict(payload)
    if op == "update_content":
        return {**payload, "embedding": np.asarray(payload["embedding"], dtype=np.float64).tolist()}
    return payload


def _decode_payload(op: str, payload: Any) -> Any:
    if op == "add_node":
        return node_from_dict(payload)
    if op == "update_content":
        return {**payload, "embedding": np.asarray(payload["embedding"], dtype=np.float64)}
    return payload


def _dumps(obj: Any) -> bytes:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")


# ----------------------------------------------------------------------
# write-ahead log


@dataclass
class WalEntry:
    lsn: int
    op: str
    payload: Any


class WriteAheadLog:
    def __init__(self, path: str | Path, next_lsn: int = 1, fsync: bool = False):
        self.path = Path(path)
        self.next_lsn = next_lsn
        self.fsync = fsync
        self._fh = open(self.path, "ab")

    def append_group(self, ops: Iterable[tuple[str, Any]]) -> list[WalEntry]:
        """Write one atomic group; returns the entries with assigned lsns."""
        entries = []
        for op, payload in ops:
            entries.append(WalEntry(self.next_lsn, op, payload))
            self.next_lsn += 1
        if not entries:
            return entries
        body = _dumps([{"lsn": e.lsn, "op": e.op, "payload": _encode_payload(e.op, e.payload)} for e in entries])
        self._fh.write(_FRAME.pack(len(body), zlib.crc32(body)) + body)
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())
        return entries

    def truncate(self) -> None:
        self._fh.close()
        self._fh = open(self.path, "wb")
        self._fh.close()
        self._fh = open(self.path, "ab")

    def close(self) -> None:
        self._fh.close()


def read_wal(path: str | Path) -> list[list[WalEntry]]:
    path = Path(path)
    if not path.exists():
        return []
    data = path.read_bytes()
    groups: list[list[WalEntry]] = []
    pos = 0
    last_lsn = 0
    while pos < len(data):
        if pos + _FRAME.size > len(data):
            logger.warning("discarding torn WAL header at byte %d", pos)
            break
        length, crc = _FRAME.unpack_from(data, pos)
        start = pos + _FRAME.size
        if start + length > len(data):
            logger.warning("discarding torn WAL group at byte %d", pos)
            break
        body = data[start : start + length]
        if zlib.crc32(body) != crc:
            raise ChecksumError(f"{path}: WAL checksum mismatch in frame at byte {pos}")
        group = []
        for e in json.loads(body):
            if e["lsn"] <= last_lsn:
                raise StorageError(f"{path}: lsn {e['lsn']} is not increasing")
            last_lsn = e["lsn"]
            group.append(WalEntry(e["lsn"], e["op"], _decode_payload(e["op"], e["payload"])))
        groups.append(group)
        pos = start + length
    return groups


# ----------------------------------------------------------------------
# snapshots


def _write_section(fh, name: str, data: bytes) -> None:
    raw = name.encode("ascii")
    fh.write(_NAME.pack(len(raw)) + raw + _SECTION.pack(len(data), zlib.crc32(data)) + data)


def write_snapshot(path: str | Path, graph: MemoryGraph, lsn: int, seq: int) -> None:
    """Write atomically (temp file, then rename)."""
    path = Path(path)
    with graph.lock:
        ordered = sorted(graph.nodes.values(), key=lambda n: n.effective_time)
        edges = [[p, c] for n in ordered for c in [n.id] for p in graph.parents[c]]
        meta = {
            "lsn": lsn,
            "seq": seq,
            "dim": graph.dim,
            "root": graph.root_id,
            "k_parents": graph.k_parents,
            "thread_limit": graph.thread_limit,
            "count": len(ordered),
        }
        nodes = b"".join(_dumps(node_to_dict(n, embedding=False)) + b"\n" for n in ordered)
        emb = np.stack([np.asarray(n.embedding, dtype="<f8") for n in ordered]).tobytes()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        _write_section(fh, "meta", _dumps(meta))
        _write_section(fh, "nodes", nodes)
        _write_section(fh, "embeddings", emb)
        _write_section(fh, "edges", _dumps(edges))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_snapshot(path: str | Path, **graph_kwargs) -> tuple[MemoryGraph, dict[str, Any]]:
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise StorageError(f"{path}: not a snapshot file")
    pos = len(MAGIC)
    sections: dict[str, bytes] = {}
    while pos < len(data):
        try:
            (nlen,) = _NAME.unpack_from(data, pos)
            name = data[pos + _NAME.size : pos + _NAME.size + nlen].decode("ascii")
            pos += _NAME.size + nlen
            length, crc = _SECTION.unpack_from(data, pos)
        except struct.error:
            raise StorageError(f"{path}: truncated section header at byte {pos}") from None
        pos += _SECTION.size
        body = data[pos : pos + length]
        if len(body) != length:
            raise StorageError(f"{path}: section {name!r} is truncated")
        if zlib.crc32(body) != crc:
            raise ChecksumError(f"{path}: checksum mismatch in section {name!r}")
        sections[name] = body
        pos += length
    missing = {"meta", "nodes", "embeddings", "edges"} - set(sections)
    if missing:
        raise StorageError(f"{path}: missing sections {sorted(missing)}")
    meta = json.loads(sections["meta"])
    dim = meta["dim"]
    lines = [json.loads(line) for line in sections["nodes"].splitlines() if line]
    mat = np.frombuffer(sections["embeddings"], dtype="<f8").reshape(len(lines), dim).astype(np.float64)
    nodes = [node_from_dict(d, mat[i].copy()) for i, d in enumerate(lines)]
    kwargs = {"k_parents": meta["k_parents"], "thread_limit": meta["thread_limit"], **graph_kwargs}
    g = MemoryGraph.from_edges(dim, nodes, [tuple(e) for e in json.loads(sections["edges"])], meta["root"], **kwargs)
    return g, meta


# ----------------------------------------------------------------------
# data directory


class DataDir:
    """Snapshot plus WAL tail in one directory."""

    def __init__(self, root: str | Path, fsync: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self.wal: WriteAheadLog | None = None

    @property
    def wal_path(self) -> Path:
        return self.root / WAL_NAME

    @property
    def snapshot_path(self) -> Path:
        return self.root / SNAPSHOT_NAME

    def load(self, dim: int, **graph_kwargs) -> tuple[MemoryGraph, int, int]:
        """Returns (graph, last lsn, highest seq)."""
        if self.snapshot_path.exists():
            g, meta = read_snapshot(self.snapshot_path, **graph_kwargs)
            if g.dim != dim:
                raise StorageError(f"snapshot dim {g.dim} differs from configured dim {dim}")
            lsn, seq = meta["lsn"], meta["seq"]
        else:
            g = MemoryGraph(dim, **graph_kwargs)
            lsn, seq = 0, 0
        for group in read_wal(self.wal_path):
            for e in group:
                if e.lsn <= lsn:
                    continue
                g.apply_primitive(e.op, e.payload)
                lsn = e.lsn
                if e.op == "add_node":
                    seq = max(seq, e.payload.effective_time.seq)
        if g.journal:
            g.journal.clear()
        self.wal = WriteAheadLog(self.wal_path, next_lsn=lsn + 1, fsync=self.fsync)
        return g, lsn, seq

    def log(self, ops: list[tuple[str, Any]]) -> None:
        if self.wal is None:
            raise StorageError("data directory is not open")
        self.wal.append_group(ops)

    @property
    def lsn(self) -> int:
        return 0 if self.wal is None else self.wal.next_lsn - 1

    def snapshot(self, graph: MemoryGraph, seq: int) -> None:
        write_snapshot(self.snapshot_path, graph, self.lsn, seq)
        if self.wal is not None:
            self.wal.truncate()

    def close(self) -> None:
        if self.wal is not None:
            self.wal.close()
            self.wal = None


# ----------------------------------------------------------------------
# JSONL records

RECORD_KINDS = ("profile", "event", "video_event", "object")

RECORD_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["id", "kind", "content", "effective_time", "provenance"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "kind": {"enum": list(RECORD_KINDS)},
        "content": {"type": "string", "minLength": 1},
        "effective_time": {
            "type": "object",
            "required": ["wall_ms", "seq"],
            "properties": {"wall_ms": {"type": "integer", "minimum": 0}, "seq": {"type": "integer", "minimum": 0}},
        },
        "provenance": {
            "type": "object",
            "properties": {
                "session_id": {"type": ["string", "null"]},
                "turn_ids": {"type": "array", "items": {"type": "string"}},
                "roles": {"type": "array", "items": {"type": "string"}},
                "clip_refs": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                },
                "asset": {"type": ["string", "null"]},
            },
        },
        "embedding": {"type": ["array", "null"], "items": {"type": "number"}},
        "tombstone": {"type": "boolean"},
        "attributes": {"type": "object"},
    },
}


def record_kind(n: MemoryNode) -> str:
    if n.kind is MemoryKind.EVENT and n.has_clips:
        return "video_event"
    return n.kind.value


def _kind_problems(rec: dict[str, Any]) -> list[str]:
    prov, attrs, kind = rec["provenance"], rec.get("attributes") or {}, rec["kind"]
    problems = []
    if kind == "profile" and not attrs.get("subject"):
        problems.append("profile records need attributes.subject")
    if kind in ("event", "video_event"):
        if not prov.get("turn_ids"):
            problems.append(f"{kind} records need provenance.turn_ids")
        if not prov.get("roles"):
            problems.append(f"{kind} records need provenance.roles")
    if kind == "event" and prov.get("clip_refs"):
        problems.append("event records with clip_refs must use kind video_event")
    if kind == "video_event":
        if not prov.get("asset"):
            problems.append("video_event records need provenance.asset")
        if not prov.get("clip_refs"):
            problems.append("video_event records need provenance.clip_refs")
    if kind == "object":
        if not attrs.get("identity"):
            problems.append("object records need attributes.identity")
        if not isinstance(attrs.get("first_observed_s"), (int, float)):
            problems.append("object records need numeric attributes.first_observed_s")
    for s, e in prov.get("clip_refs") or []:
        if s < 0 or s > e:
            problems.append(f"clip ({s}, {e}) is not a valid range")
    return problems


def export_records(graph: MemoryGraph) -> Iterator[str]:
    with graph.lock:
        ordered = sorted((n for n in graph.nodes.values() if not n.is_root), key=lambda n: n.effective_time)
    for n in ordered:
        d = node_to_dict(n)
        d["kind"] = record_kind(n)
        yield json.dumps(d, ensure_ascii=False, sort_keys=True)


def export_jsonl(graph: MemoryGraph, path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for line in export_records(graph):
            fh.write(line + "\n")
            count += 1
    return count


def parse_records(lines: Iterable[str], dim: int) -> list[dict[str, Any]]:
    """Validate records; raises RecordError naming the 1-based line."""
    out = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordError(f"invalid JSON: {exc.msg}", lineno) from None
        try:
            jsonschema.validate(rec, RECORD_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise RecordError(f"schema violation: {exc.message}", lineno) from None
        problems = _kind_problems(rec)
        if rec.get("embedding") is not None and len(rec["embedding"]) != dim:
            problems.append(f"embedding has {len(rec['embedding'])} dims, expected {dim}")
        if rec["id"] in seen:
            problems.append(f"duplicate id {rec['id']}")
        if problems:
            raise RecordError("; ".join(problems), lineno)
        seen.add(rec["id"])
        out.append(rec)
    return out


def records_to_nodes(records: list[dict[str, Any]], embed) -> list[MemoryNode]:
    """Build nodes with fresh seqs in effective-time order.

    Records without an embedding are re-embedded with ``embed`` (a batch
    function ``list[str] -> list[vector]``).
    """
    order = sorted(
        range(len(records)),
        key=lambda i: (records[i]["effective_time"]["wall_ms"], records[i]["effective_time"]["seq"], i),
    )
    missing = [records[i]["content"] for i in order if records[i].get("embedding") is None]
    fresh = iter(embed(missing) if missing else [])
    nodes = []
    for seq, i in enumerate(order, 1):
        rec = dict(records[i])
        vec = np.asarray(rec["embedding"], dtype=np.float64) if rec.get("embedding") is not None else next(fresh)
        rec["kind"] = "event" if rec["kind"] == "video_event" else rec["kind"]
        rec["effective_time"] = {"wall_ms": rec["effective_time"]["wall_ms"], "seq": seq}
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise RecordError(f"record {rec['id']} has a zero embedding")
        nodes.append(node_from_dict(rec, vec / norm if abs(norm - 1.0) > 1e-9 else vec))
    return nodes
