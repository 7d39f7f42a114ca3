"""The memory store: graph, provider, config and durability behind one writer."""

from __future__ import annotations

import logging
import threading
from pathlib import Path
from typing import Any, Iterable

from . import kernels, storage
from .config import Config
from .errors import ValidationError
from .graph import MemoryGraph, MutationReport, check_invariants, offline_build, reduce_in_place
from .model import SeqClock
from .pipeline import BatchReport, Carry, DialogueTurn, StepReport, Summary, WriteContext, offline_batch, online_step
from .providers import MockProvider, OpenAICompatProvider, Provider
from .reading import AgentResult, LinearContext, Toolbox, VlmBackend, react_loop, retrieve

logger = logging.getLogger(__name__)


def make_provider(cfg: Config) -> Provider:
    if cfg.provider == "mock":
        return MockProvider(cfg.dim, cfg.mock_seed)
    provider = OpenAICompatProvider.from_env(extra_body=cfg.extra_body)
    if provider.dim != cfg.dim:
        raise ValidationError(f"MEM_EMBED_DIM={provider.dim} differs from configured dim {cfg.dim}")
    return provider


class MemoryStore:
    """All mutations go through one writer lock; reads use graph snapshots."""

    def __init__(
        self,
        cfg: Config | None = None,
        provider: Provider | None = None,
        data_dir: str | Path | None = None,
        vlm: VlmBackend | None = None,
        fsync: bool = False,
    ):
        self.cfg = cfg or Config()
        self.cfg.validate()
        self.provider = provider or make_provider(self.cfg)
        if self.provider.dim != self.cfg.dim:
            raise ValidationError(f"provider dim {self.provider.dim} differs from configured dim {self.cfg.dim}")
        self.vlm = vlm
        self.data = storage.DataDir(data_dir, fsync=fsync) if data_dir is not None else None
        self.clock = SeqClock()
        if self.data is not None:
            graph, _, seq = self.data.load(self.cfg.dim, **self._graph_kwargs())
        else:
            graph, seq = MemoryGraph(self.cfg.dim, **self._graph_kwargs()), 0
        self._install(graph, seq)
        self.writer = threading.RLock()
        self.carry = Carry()
        self.pending_online: list[Summary] = []

    def _graph_kwargs(self) -> dict[str, Any]:
        return {"k_parents": self.cfg.k_parents, "thread_limit": self.cfg.thread_limit, "journal": True}

    def _install(self, graph: MemoryGraph, seq: int = 0) -> None:
        if graph.journal is None:
            graph.journal = []
        graph.drain_journal()
        self.graph = graph
        top = max((n.effective_time.seq for n in graph.nodes.values()), default=0)
        self.clock.advance_past(max(seq, top))

    def _commit(self) -> None:
        ops = self.graph.drain_journal()
        if ops and self.data is not None:
            self.data.log(ops)

    def _ctx(self) -> WriteContext:
        return WriteContext(self.graph, self.provider, self.cfg, self.clock, self._commit)

    # -- writes -------------------------------------------------------

    def add_turn(self, turn: DialogueTurn) -> StepReport:
        with self.writer:
            try:
                report, failed = online_step(self._ctx(), turn, self.pending_online)
            finally:
                self._commit()
            self.pending_online = failed
            return report

    def add_batch(self, turns: Iterable[DialogueTurn]) -> BatchReport:
        with self.writer:
            try:
                report, self.carry = offline_batch(self._ctx(), list(turns), self.carry)
            finally:
                self._commit()
            return report

    def delete(self, node_id: str) -> MutationReport:
        with self.writer:
            try:
                return self.graph.apply_delete(node_id)
            finally:
                self._commit()

    def rebuild(self) -> dict[str, Any]:
        """Recompute every edge from the nodes, then reduce transitively."""
        with self.writer:
            old = self.graph
            before = old.edge_set()
            fresh = offline_build(
                list(old.nodes.values()),
                self.cfg.dim,
                self.cfg.k_parents,
                workers=self.cfg.workers,
                thread_limit=self.cfg.thread_limit,
                root_id=old.root_id,
            )
            reduced = reduce_in_place(fresh)
            after = fresh.edge_set()
            fresh.journal = []
            self._install(fresh)
            self._checkpoint()
            diff = {
                "edges_before": len(before),
                "edges_after": len(after),
                "added": sorted([list(e) for e in after - before]),
                "removed": sorted([list(e) for e in before - after]),
                "reduction_removed": len(reduced),
            }
            logger.info("rebuild: +%d -%d edges", len(diff["added"]), len(diff["removed"]))
            return diff

    def _checkpoint(self) -> None:
        if self.data is not None:
            self.data.snapshot(self.graph, self.clock.last)

    def snapshot(self) -> None:
        with self.writer:
            self._commit()
            self._checkpoint()

    def import_jsonl(self, path: str | Path) -> int:
        with open(path, encoding="utf-8") as fh:
            records = storage.parse_records(fh, self.cfg.dim)
        with self.writer:
            nodes = storage.records_to_nodes(records, self.provider.embed)
            graph = offline_build(
                nodes,
                self.cfg.dim,
                self.cfg.k_parents,
                workers=self.cfg.workers,
                thread_limit=self.cfg.thread_limit,
                root_id=self.graph.root_id,
            )
            self.clock = SeqClock()
            self._install(graph)
            self._checkpoint()
            return len(nodes)

    def export_jsonl(self, path: str | Path) -> int:
        return storage.export_jsonl(self.graph, path)

    def close(self) -> None:
        if self.data is not None:
            self.data.close()

    # -- reads --------------------------------------------------------

    def retrieve(
        self, q: str, k: int | None = None, depth: int | None = None, max_nodes: int | None = None
    ) -> LinearContext:
        return retrieve(self.graph, self.provider, q, self.cfg, k=k, depth=depth, max_nodes=max_nodes)

    def toolbox(self) -> Toolbox:
        return Toolbox(self.graph, self.provider, self.cfg, self.vlm)

    def agent_query(self, q: str, max_iterations: int | None = None) -> AgentResult:
        return react_loop(self.provider, self.toolbox(), q, max_iterations or self.cfg.max_iterations)

    def check(self) -> list[str]:
        with self.graph.lock:
            return check_invariants(self.graph)

    def stats(self) -> dict[str, Any]:
        g = self.graph
        with g.lock:
            live = len(g.live_ids())
            return {
                "nodes": live,
                "tombstones": len(g.nodes) - live - 1,
                "edges": g.edge_count,
                "provider": self.provider.stats.snapshot(),
                "kernel_backend": kernels.BACKEND,
                "pending": {
                    "turns": len(self.carry.turns),
                    "summaries": len(self.carry.summaries) + len(self.pending_online),
                },
                "lsn": self.data.lsn if self.data is not None else None,
            }
