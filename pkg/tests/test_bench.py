from __future__ import annotations

import json

import pytest

from memdag.bench import (
    BUNDLED_CORPUS,
    BUNDLED_PROBES,
    CorpusSpec,
    bench_replay,
    generate_corpus,
    load_corpus,
    load_probes,
    probes_path_for,
    write_corpus,
)
from memdag.config import Config
from memdag.errors import ValidationError
from memdag.pipeline import DialogueTurn

CFG = Config(dim=256)


@pytest.fixture(scope="module")
def small():
    turns, meta = generate_corpus(CorpusSpec(turns=60, probes=10, seed=3))
    return [DialogueTurn.from_dict(t) for t in turns], meta["probes"]


def test_generator_is_seeded_and_shaped():
    a = generate_corpus(CorpusSpec(turns=30, probes=5, seed=1))
    b = generate_corpus(CorpusSpec(turns=30, probes=5, seed=1))
    c = generate_corpus(CorpusSpec(turns=30, probes=5, seed=2))
    assert a == b and a != c
    turns, meta = a
    assert len(turns) == 30 and len(meta["probes"]) == 5
    for t in turns:
        DialogueTurn.from_dict(t)
    assert all(p["expected_texts"] and p["query"] for p in meta["probes"])


def test_bundled_files_match_generator():
    turns, meta = generate_corpus(CorpusSpec())
    lines = BUNDLED_CORPUS.read_text().splitlines()
    assert [json.loads(x) for x in lines] == turns
    assert json.loads(BUNDLED_PROBES.read_text()) == meta
    assert probes_path_for(BUNDLED_CORPUS) == BUNDLED_PROBES


def test_write_and_load(tmp_path):
    turns, meta = generate_corpus(CorpusSpec(turns=5, probes=2))
    out = tmp_path / "x_corpus.jsonl"
    write_corpus(turns, meta, out, probes_path_for(out))
    assert [t.to_dict() for t in load_corpus(out)] == turns
    assert load_probes(tmp_path / "x_probes.json") == meta["probes"]
    out.write_text(out.read_text() + "{broken\n")
    with pytest.raises(ValidationError, match="line 6"):
        load_corpus(out)


def test_modes_compare(small):
    turns, probes = small
    per, s1 = bench_replay(turns, probes, "per_turn", 0, CFG)
    bat, s2 = bench_replay(turns, probes, "batched", 0, CFG)
    assert bat.provider["chat_calls"] < per.provider["chat_calls"]
    assert bat.dedup_ratio <= per.dedup_ratio
    for rep, store in ((per, s1), (bat, s2)):
        assert rep.node_count == len(store.graph.live_ids()) and rep.edge_count == store.graph.edge_count
        assert rep.probes == len(probes) and 0 <= rep.probe_recall <= 1
        assert store.check() == []
        assert rep.write_latency_ms["p50"] <= rep.write_latency_ms["p95"]


def test_identical_seeds_identical_reports(small):
    turns, probes = small
    a, _ = bench_replay(turns, probes, "batched", 5, CFG)
    b, _ = bench_replay(turns, probes, "batched", 5, CFG)
    assert a.to_json() == b.to_json() and "host_wall_ms" not in a.to_dict()
    timed, _ = bench_replay(turns, probes, "batched", 5, CFG, timing=True)
    assert timed.to_dict()["host_wall_ms"] > 0


def test_unknown_mode(small):
    with pytest.raises(ValueError):
        bench_replay(small[0], small[1], "sideways", 0, CFG)
