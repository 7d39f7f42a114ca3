from __future__ import annotations

import json

import numpy as np
import pytest

from memdag.bench import BUNDLED_CORPUS, load_corpus
from memdag.config import Config
from memdag.errors import ChecksumError, RecordError, StorageError
from memdag.graph import MemoryGraph, insert_fold
from memdag.model import Provenance
from memdag.providers import MockProvider
from memdag.storage import (
    DataDir,
    WriteAheadLog,
    export_records,
    parse_records,
    read_snapshot,
    read_wal,
    records_to_nodes,
    write_snapshot,
)
from memdag.store import MemoryStore

from .conftest import make_node, random_nodes

DIM = 16


def same_graph(a: MemoryGraph, b: MemoryGraph) -> None:
    assert a.edge_set() == b.edge_set()
    assert set(a.nodes) == set(b.nodes)
    for nid, n in a.nodes.items():
        m = b.nodes[nid]
        assert (n.content, n.effective_time, n.tombstone, n.kind) == (m.content, m.effective_time, m.tombstone, m.kind)
        assert np.array_equal(n.embedding, m.embedding)
        assert list(a.parents[nid]) == list(b.parents[nid])


# -- WAL ------------------------------------------------------------------


def test_wal_groups_round_trip(tmp_path):
    wal = WriteAheadLog(tmp_path / "w.log")
    wal.append_group([("add_edge", ["a", "b"]), ("del_edge", ["a", "b"])])
    wal.append_group([])
    wal.append_group([("tombstone", "a")])
    wal.close()
    groups = read_wal(tmp_path / "w.log")
    assert [[(e.lsn, e.op) for e in g] for g in groups] == [[(1, "add_edge"), (2, "del_edge")], [(3, "tombstone")]]


@pytest.mark.parametrize("cut", [3, 9, 20])
def test_wal_torn_tail_is_dropped(tmp_path, cut):
    path = tmp_path / "w.log"
    wal = WriteAheadLog(path)
    wal.append_group([("tombstone", "a")])
    wal.append_group([("tombstone", "b"), ("tombstone", "c")])
    wal.close()
    data = path.read_bytes()
    # the first group's JSON body ends at its first closing bracket
    first = data.index(b"]", 8) + 1
    path.write_bytes(data[: first + cut])
    groups = read_wal(path)
    assert [[e.payload for e in g] for g in groups] == [["a"]]


def test_wal_checksum_mismatch_raises(tmp_path):
    path = tmp_path / "w.log"
    wal = WriteAheadLog(path)
    wal.append_group([("tombstone", "abc")])
    wal.close()
    data = bytearray(path.read_bytes())
    data[-3] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        read_wal(path)


# -- snapshots --------------------------------------------------------------


def test_snapshot_round_trip(tmp_path):
    g = insert_fold(random_nodes(150, DIM, seed=3), DIM, k_parents=5)
    for nid in sorted(g.live_ids())[::17]:
        g.apply_delete(nid)
    write_snapshot(tmp_path / "s.bin", g, lsn=42, seq=150)
    back, meta = read_snapshot(tmp_path / "s.bin")
    same_graph(g, back)
    assert meta["lsn"] == 42 and meta["seq"] == 150 and back.k_parents == 5
    assert not (tmp_path / "s.bin.tmp").exists()


def test_snapshot_corruption_detected(tmp_path):
    g = insert_fold(random_nodes(10, DIM, seed=3), DIM)
    write_snapshot(tmp_path / "s.bin", g, 0, 10)
    data = bytearray((tmp_path / "s.bin").read_bytes())
    data[len(data) // 2] ^= 0xFF
    (tmp_path / "s.bin").write_bytes(bytes(data))
    with pytest.raises(StorageError):
        read_snapshot(tmp_path / "s.bin")
    (tmp_path / "x.bin").write_bytes(b"nope")
    with pytest.raises(StorageError):
        read_snapshot(tmp_path / "x.bin")


def test_empty_data_dir_loads_root_only(tmp_path):
    g, lsn, seq = DataDir(tmp_path / "d").load(DIM)
    assert list(g.nodes) == ["root"] and (lsn, seq) == (0, 0)


# -- replay equals live -------------------------------------------------------


def corpus_turns(n):
    return load_corpus(BUNDLED_CORPUS)[:n]


def test_replay_of_interleaved_groups_matches_live(tmp_path):
    cfg = Config(dim=128)
    live = MemoryStore(cfg, MockProvider(128), data_dir=tmp_path / "d")
    turns = corpus_turns(80)
    live.add_batch(turns[:30])
    live.snapshot()
    live.add_batch(turns[30:60])
    for t in turns[60:]:
        live.add_turn(t)
    victim = sorted(live.graph.live_ids())[5]
    live.delete(victim)
    live.close()
    reopened = MemoryStore(cfg, MockProvider(128), data_dir=tmp_path / "d")
    same_graph(live.graph, reopened.graph)
    assert reopened.clock.last >= max(n.effective_time.seq for n in live.graph.nodes.values())
    # later writes continue without seq collisions
    reopened.add_turn(turns[0])
    assert reopened.check() == []


def test_partial_group_at_tail_is_discarded(tmp_path):
    cfg = Config(dim=128)
    s = MemoryStore(cfg, MockProvider(128), data_dir=tmp_path / "d")
    s.add_batch(corpus_turns(10))
    before = s.graph.edge_set()
    victim = next(n for n in sorted(s.graph.live_ids()) if s.graph.children[n])
    s.delete(victim)
    s.close()
    wal = tmp_path / "d" / "wal.log"
    data = wal.read_bytes()
    wal.write_bytes(data[:-5])
    back = MemoryStore(cfg, MockProvider(128), data_dir=tmp_path / "d")
    assert back.graph.edge_set() == before and not back.graph.nodes[victim].tombstone


# -- JSONL records ------------------------------------------------------------


def record(**over):
    rec = {
        "id": "e1",
        "kind": "event",
        "content": "met lin at the cafe",
        "effective_time": {"wall_ms": 5, "seq": 1},
        "provenance": {"turn_ids": ["t1"], "roles": ["user"]},
        "embedding": None,
    }
    rec.update(over)
    return json.dumps(rec)


@pytest.mark.parametrize(
    "bad",
    [
        "{not json",
        record(kind="alien"),
        record(content=""),
        record(kind="profile"),
        record(kind="object"),
        record(kind="video_event"),
        record(provenance={"turn_ids": ["t"], "roles": ["user"], "clip_refs": [[1, 2]], "asset": "cam"}),
        record(provenance={"turn_ids": [], "roles": ["user"]}),
        record(embedding=[1.0, 0.0]),
    ],
)
def test_malformed_line_reports_line_number(bad):
    with pytest.raises(RecordError) as info:
        parse_records([record(id="ok"), "", bad], DIM)
    assert info.value.line == 3 and "line 3" in str(info.value)


def test_duplicate_ids_rejected():
    with pytest.raises(RecordError):
        parse_records([record(), record()], DIM)


def test_kind_fields_accepted():
    lines = [
        record(id="p", kind="profile", attributes={"subject": "u1"}),
        record(id="o", kind="object", attributes={"identity": "red mug", "first_observed_s": 3.5}),
        record(id="v", kind="video_event",
               provenance={"turn_ids": ["t"], "roles": ["narrator"], "clip_refs": [[1.0, 2.0]], "asset": "cam"}),
    ]
    recs = parse_records(lines, DIM)
    nodes = records_to_nodes(recs, lambda texts: [np.eye(DIM)[0] for _ in texts])
    assert [n.effective_time.seq for n in nodes] == [1, 2, 3]
    assert nodes[2].kind.value == "event" and nodes[2].has_clips


def test_export_import_export_is_byte_stable(tmp_path):
    nodes = random_nodes(60, DIM, seed=9)
    nodes[3].provenance = Provenance(source_turn_ids=["t"], roles=["narrator"], clip_refs=[(1.0, 2.0)], asset="cam")
    g = insert_fold(nodes, DIM)
    g.apply_delete(sorted(g.live_ids())[4])
    first = list(export_records(g))
    recs = parse_records(first, DIM)
    g2 = insert_fold(records_to_nodes(recs, None), DIM)
    second = list(export_records(g2))
    # seqs are reassigned 1..n; everything else must match
    strip = lambda lines: [{k: v for k, v in json.loads(x).items() if k != "effective_time"} for x in lines]
    assert strip(first) == strip(second)
    assert list(export_records(insert_fold(records_to_nodes(parse_records(second, DIM), None), DIM))) == second


def test_store_import_export_cycle(tmp_path):
    cfg = Config(dim=128)
    s = MemoryStore(cfg, MockProvider(128))
    s.add_batch(corpus_turns(40))
    s.export_jsonl(tmp_path / "a.jsonl")
    t = MemoryStore(cfg, MockProvider(128), data_dir=tmp_path / "d")
    n = t.import_jsonl(tmp_path / "a.jsonl")
    assert n == len(s.graph.nodes) - 1 and t.check() == []
    t.export_jsonl(tmp_path / "b.jsonl")
    u = MemoryStore(cfg, MockProvider(128))
    u.import_jsonl(tmp_path / "b.jsonl")
    u.export_jsonl(tmp_path / "c.jsonl")
    assert (tmp_path / "b.jsonl").read_bytes() == (tmp_path / "c.jsonl").read_bytes()
    t.close()
    reopened = MemoryStore(cfg, MockProvider(128), data_dir=tmp_path / "d")
    assert reopened.graph.edge_set() == t.graph.edge_set()
