"""Synthetic corpus generation and the replay benchmark.

The generator writes dialogue turns whose facts are built from invented
words, so the hashed mock embedder sees exactly the overlap the generator
intends: distinct facts share at most two of six content words, repeats
share at least five. Ground truth for every probe is emitted alongside the
corpus as the final text of the facts it asks about; the harness resolves
those texts to node ids after replay.
"""

from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import Config
from .pipeline import DialogueTurn
from .providers import MockProvider, Provider
from .providers.mock import CORRECTION, FORGET
from .store import MemoryStore

logger = logging.getLogger(__name__)

MODES = ("per_turn", "batched")
DATA_DIR = Path(__file__).parent / "data"
BUNDLED_CORPUS = DATA_DIR / "synthetic_corpus.jsonl"
BUNDLED_PROBES = DATA_DIR / "synthetic_probes.json"

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kl", "pr", "st", "tr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "n", "r", "l", "s", "k", "m"]


# ----------------------------------------------------------------------
# corpus generation


@dataclass
class CorpusSpec:
    turns: int = 200
    session_len: int = 20
    facts_per_turn: int = 2
    duplicate_rate: float = 0.5
    same_session_rate: float = 0.8
    correction_rate: float = 0.06
    forget_rate: float = 0.03
    video_rate: float = 0.1
    topics: int = 30
    probes: int = 40
    seed: int = 7


@dataclass
class _Fact:
    fid: int
    topic: tuple[str, str]
    words: list[str]
    session: int
    forgotten: bool = False

    def text(self) -> str:
        a, b = self.topic
        w = self.words
        return f"The {a} {b} is {w[0]} with {w[1]} and {w[2]} {w[3]}."

    def rephrase(self) -> str:
        # five of the six content words; overlap 5/6 with the original
        a, b = self.topic
        w = self.words
        return f"Remember that {a} {b} was {w[0]} with {w[1]} and {w[2]}."


class _Words:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def new(self) -> str:
        while True:
            parts = [self.rng.choice(_ONSETS) + self.rng.choice(_VOWELS) for _ in range(self.rng.randint(2, 3))]
            word = "".join(parts) + self.rng.choice(_CODAS)
            if word not in self.used:
                self.used.add(word)
                return word


def generate_corpus(spec: CorpusSpec) -> tuple[list[dict[str, Any]], dict[str, Any]]:
    """Returns (turn dicts, probe file contents)."""
    rng = random.Random(spec.seed)
    words = _Words(rng)
    # "remember", "that", "was" appear in every restatement; keep them out of facts
    words.used.update({"remember", "that", "was", "what"})
    topics = [(words.new().capitalize(), words.new()) for _ in range(spec.topics)]
    facts: list[_Fact] = []
    turns: list[dict[str, Any]] = []
    wall = 1_700_000_000_000
    for t in range(spec.turns):
        session = t // spec.session_len
        sentences: list[str] = []
        touched: set[int] = set()
        for _ in range(spec.facts_per_turn):
            live = [f for f in facts if not f.forgotten and f.fid not in touched]
            r = rng.random()
            if live and r < spec.correction_rate:
                f = rng.choice(live)
                f.words = f.words[:3] + [words.new()]
                sentences.append(f"{CORRECTION} {f.text()}")
                touched.add(f.fid)
            elif live and r < spec.correction_rate + spec.forget_rate:
                f = rng.choice(live)
                f.forgotten = True
                a, b = f.topic
                sentences.append(f"{FORGET} {a} {b} {' '.join(f.words)}.")
                touched.add(f.fid)
            elif live and r < spec.correction_rate + spec.forget_rate + spec.duplicate_rate:
                here = [f for f in live if f.session == session]
                pool = here if here and rng.random() < spec.same_session_rate else live
                f = rng.choice(pool)
                sentences.append(f.text() if rng.random() < 0.5 else f.rephrase())
                touched.add(f.fid)
            else:
                f = _Fact(len(facts), rng.choice(topics), [words.new() for _ in range(4)], session)
                facts.append(f)
                sentences.append(f.text())
                touched.add(f.fid)
        messages = [
            {"role": "user", "text": " ".join(sentences), "wall_ms": wall},
            {"role": "assistant", "text": "Noted.", "wall_ms": wall + 500},
        ]
        turn: dict[str, Any] = {"turn_id": f"turn-{t:04d}", "session_id": f"session-{session:02d}", "messages": messages}
        if rng.random() < spec.video_rate:
            start = float(rng.randint(0, 3000))
            f = _Fact(len(facts), rng.choice(topics), [words.new() for _ in range(4)], session)
            facts.append(f)
            messages.insert(1, {"role": "narrator", "text": f.text(), "wall_ms": wall + 100})
            turn["media_refs"] = [{"asset": f"video-{session:02d}", "start_s": start, "end_s": start + 30.0}]
        turns.append(turn)
        wall += 60_000
    live = [f for f in facts if not f.forgotten]
    probes = []
    for p in range(spec.probes):
        picks = rng.sample(live, 2 if p % 5 == 4 else 1)
        query = " ".join(f"{f.topic[0]} {f.topic[1]} {f.words[0]} {f.words[1]}" for f in picks)
        probes.append({"probe_id": f"probe-{p:02d}", "query": query, "expected_texts": [f.text() for f in picks]})
    meta = {"corpus_seed": spec.seed, "turns": spec.turns, "facts": len(facts), "probes": probes}
    return turns, meta


def write_corpus(turns: list[dict[str, Any]], meta: dict[str, Any], corpus_path: Path, probes_path: Path) -> None:
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for t in turns:
            fh.write(json.dumps(t, ensure_ascii=False, sort_keys=True) + "\n")
    probes_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def probes_path_for(corpus: Path) -> Path:
    if corpus.name.endswith("_corpus.jsonl"):
        return corpus.with_name(corpus.name[: -len("_corpus.jsonl")] + "_probes.json")
    return corpus.with_suffix(".probes.json")


def load_corpus(path: str | Path) -> list[DialogueTurn]:
    from .errors import ValidationError

    turns = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                turns.append(DialogueTurn.from_dict(json.loads(line)))
            except (json.JSONDecodeError, ValidationError) as exc:
                raise ValidationError(f"line {lineno}: {exc}", getattr(exc, "violations", [])) from None
    return turns


def load_probes(path: str | Path) -> list[dict[str, Any]]:
    return json.loads(Path(path).read_text(encoding="utf-8"))["probes"]


# ----------------------------------------------------------------------
# replay


@dataclass
class ProbeResult:
    probe_id: str
    expected: list[str]
    retrieved: list[str]
    recall: float


def run_probes(store: MemoryStore, probes: Sequence[dict[str, Any]]) -> tuple[list[ProbeResult], list[float]]:
    """Returns per-probe results and simulated read latencies (ms)."""
    by_text: dict[str, list[str]] = {}
    for nid in store.graph.live_ids():
        by_text.setdefault(store.graph.nodes[nid].content, []).append(nid)
    results, latencies = [], []
    for p in probes:
        expected = sorted({nid for t in p["expected_texts"] for nid in by_text.get(t, [])})
        missing_texts = [t for t in p["expected_texts"] if t not in by_text]
        before = store.provider.stats.snapshot()["wall_ms_total"]
        ctx = store.retrieve(p["query"])
        latencies.append(round(store.provider.stats.snapshot()["wall_ms_total"] - before, 3))
        got = [e.node_id for e in ctx.entries]
        hit = len(set(expected) & set(got))
        denom = len(expected) + len(missing_texts)
        results.append(ProbeResult(p["probe_id"], expected, got, hit / denom if denom else 1.0))
    return results, latencies


def _pct(values: Sequence[float]) -> dict[str, float]:
    if not values:
        return {"p50": 0.0, "p95": 0.0}
    arr = np.asarray(values, dtype=np.float64)
    return {"p50": round(float(np.percentile(arr, 50)), 3), "p95": round(float(np.percentile(arr, 95)), 3)}


@dataclass
class BenchReport:
    mode: str
    seed: int
    turns: int
    input_summaries: int
    provider: dict[str, Any]
    node_count: int
    edge_count: int
    dedup_ratio: float
    write_latency_ms: dict[str, float]
    read_latency_ms: dict[str, float]
    probe_recall: float
    probes: int
    carried: int = 0
    # host timings vary run to run; only present when requested
    host_wall_ms: float | None = None
    probe_results: list[ProbeResult] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "mode": self.mode,
            "seed": self.seed,
            "turns": self.turns,
            "input_summaries": self.input_summaries,
            "provider": self.provider,
            "node_count": self.node_count,
            "edge_count": self.edge_count,
            "dedup_ratio": self.dedup_ratio,
            "write_latency_ms": self.write_latency_ms,
            "read_latency_ms": self.read_latency_ms,
            "probe_recall": self.probe_recall,
            "probes": self.probes,
            "carried": self.carried,
        }
        if self.host_wall_ms is not None:
            d["host_wall_ms"] = self.host_wall_ms
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def replay(
    turns: Sequence[DialogueTurn],
    mode: str,
    cfg: Config,
    provider: Provider | None = None,
) -> tuple[MemoryStore, int, list[float]]:
    """Feed ``turns`` through one write path; returns (store, summaries, write latencies)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    store = MemoryStore(cfg, provider or MockProvider(cfg.dim, cfg.mock_seed))
    stats = store.provider.stats
    latencies: list[float] = []
    summaries = 0
    if mode == "per_turn":
        for t in turns:
            before = stats.snapshot()["wall_ms_total"]
            pending_in = len(store.pending_online)
            summaries += store.add_turn(t).summaries - pending_in
            latencies.append(round(stats.snapshot()["wall_ms_total"] - before, 3))
    else:
        for i in range(0, len(turns), cfg.batch_size):
            before = stats.snapshot()["wall_ms_total"]
            carried_in = len(store.carry.summaries)
            report = store.add_batch(turns[i : i + cfg.batch_size])
            summaries += report.summaries - carried_in
            latencies.append(round(stats.snapshot()["wall_ms_total"] - before, 3))
        for _ in range(cfg.retries + 1):
            if not store.carry:
                break
            carried_in = len(store.carry.summaries)
            summaries += store.add_batch([]).summaries - carried_in
    return store, summaries, latencies


def bench_replay(
    turns: Sequence[DialogueTurn],
    probes: Sequence[dict[str, Any]],
    mode: str,
    seed: int = 0,
    cfg: Config | None = None,
    timing: bool = False,
) -> tuple[BenchReport, MemoryStore]:
    cfg = (cfg or Config()).updated(mock_seed=seed)
    t0 = time.perf_counter()
    store, summaries, write_lat = replay(turns, mode, cfg)
    write_stats = store.provider.stats.snapshot()
    results, read_lat = run_probes(store, probes)
    live = len(store.graph.live_ids())
    report = BenchReport(
        mode=mode,
        seed=seed,
        turns=len(turns),
        input_summaries=summaries,
        provider=write_stats,
        node_count=live,
        edge_count=store.graph.edge_count,
        dedup_ratio=round(live / summaries, 6) if summaries else 0.0,
        write_latency_ms=_pct(write_lat),
        read_latency_ms=_pct(read_lat),
        probe_recall=round(float(np.mean([r.recall for r in results])), 6) if results else 1.0,
        probes=len(results),
        carried=len(store.carry.turns) + len(store.carry.summaries) + len(store.pending_online),
        host_wall_ms=round((time.perf_counter() - t0) * 1000.0, 1) if timing else None,
        probe_results=results,
    )
    return report, store
