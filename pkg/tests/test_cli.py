from __future__ import annotations

import json

import pytest

from memdag.bench import BUNDLED_CORPUS, CorpusSpec, generate_corpus, write_corpus
from memdag.cli import EXIT_OK, EXIT_PROVIDER, EXIT_VALIDATION, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def corpus(tmp_path):
    turns, meta = generate_corpus(CorpusSpec(turns=40, probes=6, seed=2))
    path = tmp_path / "small_corpus.jsonl"
    write_corpus(turns, meta, path, tmp_path / "small_probes.json")
    return path


def test_ingest_query_check_stats(capsys, tmp_path, corpus):
    d = str(tmp_path / "store")
    code, out, _ = run(capsys, "--data-dir", d, "--dim", "128", "ingest", str(corpus), "--batch")
    assert code == EXIT_OK and json.loads(out)["added"] > 0
    code, q1, _ = run(capsys, "--data-dir", d, "--dim", "128", "query", "Vadraivan molar")
    _, q2, _ = run(capsys, "--data-dir", d, "--dim", "128", "query", "Vadraivan molar")
    assert code == EXIT_OK and q1 == q2 and "entries" in json.loads(q1)
    assert run(capsys, "--data-dir", d, "--dim", "128", "check")[:2] == (EXIT_OK, '{"violations": []}\n')
    code, out, _ = run(capsys, "--data-dir", d, "--dim", "128", "stats")
    assert json.loads(out)["nodes"] > 0


def test_per_turn_rebuild_export_import(capsys, tmp_path, corpus):
    d = str(tmp_path / "store")
    assert run(capsys, "--data-dir", d, "--dim", "128", "ingest", str(corpus), "--per-turn")[0] == EXIT_OK
    code, out, _ = run(capsys, "--data-dir", d, "--dim", "128", "rebuild")
    assert code == EXIT_OK and "edges_after" in json.loads(out)
    exp = tmp_path / "out.jsonl"
    code, out, _ = run(capsys, "--data-dir", d, "--dim", "128", "export", str(exp))
    n = json.loads(out)["exported"]
    d2 = str(tmp_path / "other")
    code, out, _ = run(capsys, "--data-dir", d2, "--dim", "128", "import", str(exp))
    assert code == EXIT_OK and json.loads(out)["imported"] == n


def test_malformed_corpus_exits_2_with_line(capsys, tmp_path, corpus):
    corpus.write_text(corpus.read_text() + "not json\n")
    code, _, err = run(capsys, "--data-dir", str(tmp_path / "s"), "--dim", "128", "ingest", str(corpus))
    assert code == EXIT_VALIDATION and "line 41" in err


def test_malformed_import_exits_2(capsys, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x"}\n')
    code, _, err = run(capsys, "--data-dir", str(tmp_path / "s"), "import", str(bad))
    assert code == EXIT_VALIDATION and "line 1" in err


def test_provider_error_exits_3(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("MEM_PROVIDER_URL", raising=False)
    code, _, err = run(capsys, "--data-dir", str(tmp_path / "s"), "--provider", "openai", "stats")
    assert code == EXIT_PROVIDER and "MEM_PROVIDER_URL" in err


def test_bench_emits_reports(capsys, corpus):
    code, out, _ = run(capsys, "--dim", "128", "bench", str(corpus), "--seed", "1")
    reports = [json.loads(x) for x in out.splitlines()]
    assert code == EXIT_OK and [r["mode"] for r in reports] == ["per_turn", "batched"]
    assert run(capsys, "--dim", "128", "bench", str(corpus), "--modes", "bogus")[0] == EXIT_VALIDATION


def test_bench_default_corpus_is_bundled(capsys):
    code, out, _ = run(capsys, "--dim", "128", "bench", "--modes", "batched")
    assert code == EXIT_OK and json.loads(out)["turns"] == len(BUNDLED_CORPUS.read_text().splitlines())


def test_gen_corpus_and_config_file(capsys, tmp_path):
    code, out, _ = run(capsys, "gen-corpus", str(tmp_path / "g_corpus.jsonl"), "--turns", "7", "--probes", "2")
    assert code == EXIT_OK and json.loads(out)["turns"] == 7
    assert (tmp_path / "g_probes.json").exists()
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dim": 64, "theta": 2.0}))
    code, _, err = run(capsys, "--config", str(cfg), "--data-dir", str(tmp_path / "s"), "stats")
    assert code == EXIT_VALIDATION and "theta" in err
