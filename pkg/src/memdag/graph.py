"""The memory DAG: insertion with irreducible-parent pruning, re-insertion,
update/delete with orphan repair, offline construction and reduction.

Edges always point from an earlier to a later effective time, so the
graph is acyclic by construction. Every primitive mutation is appended to
``journal`` (when enabled) so a write-ahead log can replay it verbatim.
"""

from __future__ import annotations

import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import (
    CycleError,
    DuplicateNodeError,
    RootOperationError,
    TombstonedNodeError,
    UnknownNodeError,
    ValidationError,
)
from .model import MemoryKind, MemoryNode, new_root, validate_node
from .vector_index import SCORE_DECIMALS, FlatIndex, ScoredId

DEFAULT_K_PARENTS = 10
DEFAULT_THREAD_LIMIT = 32
# candidates need strictly positive similarity; scores are rounded, so this is "> 0"
MIN_PARENT_SCORE = 10.0**-SCORE_DECIMALS


@dataclass
class InsertReport:
    node_id: str
    candidates_considered: list[ScoredId] = field(default_factory=list)
    parents_chosen: list[str] = field(default_factory=list)
    pruned: list[tuple[str, str]] = field(default_factory=list)
    root_fallback: bool = False
    # edges dropped elsewhere because this re-attachment made them transitive
    redundant_edges_removed: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "node_id": self.node_id,
            "candidates_considered": [c.to_dict() for c in self.candidates_considered],
            "parents_chosen": list(self.parents_chosen),
            "pruned": [list(p) for p in self.pruned],
            "root_fallback": self.root_fallback,
            "redundant_edges_removed": [list(e) for e in self.redundant_edges_removed],
        }


@dataclass
class MutationReport:
    op: str
    node_id: str
    reinserts: list[InsertReport] = field(default_factory=list)
    orphans: list[str] = field(default_factory=list)

    @property
    def reinsert_count(self) -> int:
        return len(self.reinserts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "op": self.op,
            "node_id": self.node_id,
            "reinsert_count": self.reinsert_count,
            "orphans": list(self.orphans),
            "reinserts": [r.to_dict() for r in self.reinserts],
        }


@dataclass
class ThreadPaths:
    paths: list[list[str]]
    truncated: bool


@dataclass
class GraphView:
    """Immutable CSR view; node index equals effective-time rank."""

    ids: list[str]
    index_of: dict[str, int]
    parent_ptr: np.ndarray
    parent_idx: np.ndarray
    child_ptr: np.ndarray
    child_idx: np.ndarray
    root: int
    version: int

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def rank(self) -> np.ndarray:
        return np.arange(len(self.ids), dtype=np.int64)


def _csr(n: int, rows: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(n + 1, dtype=np.int64)
    for i, row in enumerate(rows):
        ptr[i + 1] = ptr[i] + len(row)
    flat = np.fromiter((x for row in rows for x in row), dtype=np.int64, count=int(ptr[-1]))
    return ptr, flat


class MemoryGraph:
    def __init__(
        self,
        dim: int,
        k_parents: int = DEFAULT_K_PARENTS,
        thread_limit: int = DEFAULT_THREAD_LIMIT,
        root_id: str = "root",
        journal: bool = False,
    ):
        self.dim = dim
        self.k_parents = k_parents
        self.thread_limit = thread_limit
        self.index = FlatIndex(dim)
        self.nodes: dict[str, MemoryNode] = {}
        # dicts used as insertion-ordered sets
        self.parents: dict[str, dict[str, None]] = {}
        self.children: dict[str, dict[str, None]] = {}
        self._tau: dict[str, tuple[int, int]] = {}
        self._taus: set[tuple[int, int]] = set()
        self.lock = threading.RLock()
        self.version = 0
        self._view: GraphView | None = None
        self.journal: list[tuple[str, Any]] | None = [] if journal else None
        self.reinsert_calls = 0
        root = new_root(dim, root_id)
        self.root_id = root.id
        self._p_add_node(root)

    # ------------------------------------------------------------------
    # primitive mutations (journaled, no invariant logic)

    def _record(self, op: str, payload: Any) -> None:
        self.version += 1
        if self.journal is not None:
            self.journal.append((op, payload))

    def _p_add_node(self, node: MemoryNode) -> None:
        self.nodes[node.id] = node
        self.parents[node.id] = {}
        self.children[node.id] = {}
        self._tau[node.id] = node.effective_time.as_tuple()
        self._taus.add(self._tau[node.id])
        if not node.is_root and not node.tombstone:
            self.index.upsert(node.id, node.embedding, node.effective_time, node.has_clips)
        self._record("add_node", node)

    def _p_add_edge(self, parent: str, child: str) -> None:
        self.parents[child][parent] = None
        self.children[parent][child] = None
        self._record("add_edge", {"parent": parent, "child": child})

    def _p_del_edge(self, parent: str, child: str) -> None:
        del self.parents[child][parent]
        del self.children[parent][child]
        self._record("del_edge", {"parent": parent, "child": child})

    def _p_tombstone(self, node_id: str) -> None:
        self.nodes[node_id] = replace(self.nodes[node_id], tombstone=True)
        self.index.remove(node_id)
        self._record("tombstone", {"id": node_id})

    def _p_update_content(self, node_id: str, content: str, embedding: np.ndarray) -> None:
        node = replace(self.nodes[node_id], content=content, embedding=np.asarray(embedding))
        self.nodes[node_id] = node
        self.index.upsert(node_id, node.embedding, node.effective_time, node.has_clips)
        self._record("update_content", {"id": node_id, "content": content, "embedding": node.embedding})

    def apply_primitive(self, op: str, payload: Any) -> None:
        """Replay one journaled mutation (used by log recovery)."""
        if op == "add_node":
            if payload.id in self.nodes:
                raise DuplicateNodeError(payload.id)
            self._p_add_node(payload)
        elif op == "add_edge":
            self._p_add_edge(payload["parent"], payload["child"])
        elif op == "del_edge":
            self._p_del_edge(payload["parent"], payload["child"])
        elif op == "tombstone":
            self._p_tombstone(payload["id"])
        elif op == "update_content":
            self._p_update_content(payload["id"], payload["content"], payload["embedding"])
        else:
            raise ValueError(f"unknown journal op {op!r}")

    def drain_journal(self) -> list[tuple[str, Any]]:
        if self.journal is None:
            return []
        out, self.journal = self.journal, []
        return out

    # ------------------------------------------------------------------
    # queries

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: str) -> MemoryNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def live_ids(self) -> list[str]:
        return [i for i, n in self.nodes.items() if not n.tombstone and not n.is_root]

    def edge_set(self) -> set[tuple[str, str]]:
        return {(p, c) for c, ps in self.parents.items() for p in ps}

    @property
    def edge_count(self) -> int:
        return sum(len(ps) for ps in self.parents.values())

    def reachable(self, a: str, b: str) -> bool:
        """True iff a directed path a ⇝ b exists (a ⇝ a by convention)."""
        self.node(a)
        self.node(b)
        if a == b:
            return True
        bound = self._tau[b]
        tau = self._tau
        seen = {a}
        queue = deque([a])
        while queue:
            u = queue.popleft()
            for c in self.children[u]:
                if c == b:
                    return True
                # timestamps strictly increase along paths
                if c not in seen and tau[c] < bound:
                    seen.add(c)
                    queue.append(c)
        return False

    def ancestors(self, node_id: str) -> set[str]:
        self.node(node_id)
        seen: set[str] = set()
        queue = deque(self.parents[node_id])
        seen.update(queue)
        while queue:
            u = queue.popleft()
            for p in self.parents[u]:
                if p not in seen:
                    seen.add(p)
                    queue.append(p)
        return seen

    def descendants(self, node_id: str) -> set[str]:
        self.node(node_id)
        seen: set[str] = set()
        queue = deque(self.children[node_id])
        seen.update(queue)
        while queue:
            u = queue.popleft()
            for c in self.children[u]:
                if c not in seen:
                    seen.add(c)
                    queue.append(c)
        return seen

    def candidate_parents(self, v: MemoryNode, k: int | None = None) -> list[ScoredId]:
        """Top-k most similar live nodes strictly earlier than ``v``."""
        return self.index.top_k(
            v.embedding,
            k or self.k_parents,
            before=v.effective_time,
            exclude=(v.id,),
            min_score=MIN_PARENT_SCORE,
        )

    def _prune(self, cands: Sequence[str]) -> tuple[list[str], list[tuple[str, str]]]:
        if len(cands) < 2:
            return list(cands), []
        tau = self._tau
        lo = min(tau[c] for c in cands)
        # proper ancestors of any candidate, within the candidates' time window
        origin: dict[str, str] = {}
        queue: deque[str] = deque()
        for q in cands:
            for p in self.parents[q]:
                if p not in origin and tau[p] >= lo:
                    origin[p] = q
                    queue.append(p)
        while queue:
            u = queue.popleft()
            for p in self.parents[u]:
                if p not in origin and tau[p] >= lo:
                    origin[p] = origin[u]
                    queue.append(p)
        kept = [c for c in cands if c not in origin]
        pruned = [(c, f"reaches {origin[c]}") for c in cands if c in origin]
        return kept, pruned

    def prune_irreducible(self, cands: Sequence[str]) -> list[str]:
        """Keep the candidates that reach no other candidate."""
        for c in cands:
            self.node(c)
        return self._prune(list(cands))[0]

    def thread_of(self, node_id: str, limit: int | None = None) -> ThreadPaths:
        """Root-to-node paths, at most ``limit`` of them."""
        self.node(node_id)
        limit = limit or self.thread_limit
        paths: list[list[str]] = []
        truncated = False
        # iterative DFS over parents; each stack entry is a reversed partial path
        stack: list[list[str]] = [[node_id]]
        while stack:
            partial = stack.pop()
            head = partial[-1]
            if head == self.root_id:
                if len(paths) >= limit:
                    truncated = True
                    break
                paths.append(partial[::-1])
                continue
            for p in reversed(list(self.parents[head])):
                stack.append(partial + [p])
        return ThreadPaths(paths, truncated)

    def view(self) -> GraphView:
        """Cached CSR snapshot of the current graph."""
        with self.lock:
            if self._view is not None and self._view.version == self.version:
                return self._view
            ids = sorted(self.nodes, key=self._tau.__getitem__)
            index_of = {nid: i for i, nid in enumerate(ids)}
            prows = [[index_of[p] for p in self.parents[nid]] for nid in ids]
            crows = [[index_of[c] for c in self.children[nid]] for nid in ids]
            pp, pi = _csr(len(ids), prows)
            cp, ci = _csr(len(ids), crows)
            self._view = GraphView(ids, index_of, pp, pi, cp, ci, index_of[self.root_id], self.version)
            return self._view

    # ------------------------------------------------------------------
    # mutating operators

    def _attach(self, node_id: str) -> InsertReport:
        node = self.nodes[node_id]
        report = InsertReport(node_id)
        report.candidates_considered = self.candidate_parents(node)
        kept, report.pruned = self._prune([c.id for c in report.candidates_considered])
        if not kept:
            kept = [self.root_id]
            report.root_fallback = True
        for p in kept:
            self._p_add_edge(p, node_id)
        report.parents_chosen = kept
        return report

    def insert(self, v: MemoryNode) -> InsertReport:
        violations = validate_node(v)
        if v.is_root:
            violations.append("root: only the store creates the root")
        if v.tombstone:
            violations.append("tombstone: cannot insert a tombstoned node")
        if v.embedding.shape != (self.dim,):
            violations.append(f"embedding dim: expected {self.dim}")
        if violations:
            raise ValidationError(f"invalid node {v.id}", violations)
        with self.lock:
            if v.id in self.nodes:
                raise DuplicateNodeError(v.id)
            if v.effective_time.as_tuple() in self._taus:
                raise ValidationError("effective time collides with a stored node", ["time unique"])
            self._p_add_node(v)
            return self._attach(v.id)

    def _check_mutable(self, node_id: str, allow_tombstone: bool = False) -> MemoryNode:
        node = self.node(node_id)
        if node.is_root:
            raise RootOperationError("operation not allowed on the root node")
        if node.tombstone and not allow_tombstone:
            raise TombstonedNodeError(f"node {node_id} is tombstoned")
        return node

    def reinsert(self, node_id: str) -> InsertReport:
        with self.lock:
            self._check_mutable(node_id)
            self.reinsert_calls += 1
            for p in list(self.parents[node_id]):
                self._p_del_edge(p, node_id)
            report = self._attach(node_id)
            report.redundant_edges_removed = self._repair_antichain(node_id)
            return report

    def _repair_antichain(self, x: str) -> list[tuple[str, str]]:
        """Drop edges a→v made transitive by x's new incoming edges.

        New paths run ancestor(x) ⇝ x ⇝ descendant(x); an edge a→v with
        a an ancestor of x and v a descendant of x is now implied and its
        presence would break the parent antichain of v.
        """
        desc = self.descendants(x)
        if not desc:
            return []
        inside = desc | {x}
        outside: dict[str, list[str]] = {}
        for v in desc:
            for a in self.parents[v]:
                if a not in inside:
                    outside.setdefault(a, []).append(v)
        if not outside:
            return []
        tau = self._tau
        lo = min(tau[a] for a in outside)
        anc: set[str] = set()
        queue = deque(p for p in self.parents[x] if tau[p] >= lo)
        anc.update(queue)
        while queue:
            u = queue.popleft()
            for p in self.parents[u]:
                if p not in anc and tau[p] >= lo:
                    anc.add(p)
                    queue.append(p)
        removed = []
        for a in sorted(outside, key=tau.__getitem__):
            if a in anc:
                for v in sorted(outside[a], key=tau.__getitem__):
                    self._p_del_edge(a, v)
                    removed.append((a, v))
        return removed

    def _sorted_children(self, node_id: str) -> list[str]:
        return sorted(self.children[node_id], key=self._tau.__getitem__)

    def apply_update(self, node_id: str, new_content: str, new_embedding) -> MutationReport:
        emb = np.asarray(new_embedding, dtype=np.float64)
        with self.lock:
            node = self._check_mutable(node_id)
            candidate = replace(node, content=new_content, embedding=emb)
            violations = validate_node(candidate)
            if emb.shape != (self.dim,):
                violations.append(f"embedding dim: expected {self.dim}")
            if violations:
                raise ValidationError(f"invalid update for {node_id}", violations)
            kids = self._sorted_children(node_id)
            self._p_update_content(node_id, new_content, emb)
            report = MutationReport("update", node_id)
            report.reinserts.append(self.reinsert(node_id))
            for c in kids:
                if not self.nodes[c].tombstone:
                    report.reinserts.append(self.reinsert(c))
            return report

    def apply_delete(self, node_id: str) -> MutationReport:
        with self.lock:
            self._check_mutable(node_id)
            kids = self._sorted_children(node_id)
            for p in list(self.parents[node_id]):
                self._p_del_edge(p, node_id)
            for c in kids:
                self._p_del_edge(node_id, c)
            self._p_tombstone(node_id)
            report = MutationReport("delete", node_id, orphans=kids)
            for c in kids:
                report.reinserts.append(self.reinsert(c))
            return report

    # ------------------------------------------------------------------
    # whole-graph operations

    def copy_nodes(self, journal: bool = False) -> MemoryGraph:
        """Same nodes and index, no edges."""
        g = MemoryGraph(self.dim, self.k_parents, self.thread_limit, self.root_id, journal=False)
        for nid in sorted(self.nodes, key=self._tau.__getitem__):
            if nid != self.root_id:
                g._p_add_node(self.nodes[nid])
        if journal:
            g.journal = []
        return g

    @classmethod
    def from_edges(
        cls,
        dim: int,
        nodes: Iterable[MemoryNode],
        edges: Iterable[tuple[str, str]],
        root_id: str = "root",
        **kwargs,
    ) -> MemoryGraph:
        """Load nodes and edges verbatim (no pruning, no validation of edges)."""
        g = cls(dim, root_id=root_id, **kwargs)
        for n in sorted(nodes, key=lambda n: n.effective_time):
            if n.is_root:
                continue
            if n.id in g.nodes:
                raise DuplicateNodeError(n.id)
            g._p_add_node(n)
        for p, c in edges:
            g.node(p)
            g.node(c)
            g._p_add_edge(p, c)
        if g.journal:
            g.journal.clear()
        return g


def topological_order(g: MemoryGraph) -> list[str]:
    """Topological order of all nodes; CycleError if none exists."""
    view = g.view()
    try:
        order = kernels.topo_order(view.n, view.child_ptr, view.child_idx)
    except ValueError as exc:
        raise CycleError(str(exc)) from None
    return [view.ids[i] for i in order]


def reduced_edge_set(g: MemoryGraph) -> set[tuple[str, str]]:
    view = g.view()
    try:
        order = kernels.topo_order(view.n, view.child_ptr, view.child_idx)
    except ValueError as exc:
        raise CycleError(str(exc)) from None
    keep = kernels.transitive_reduction(view.n, view.child_ptr, view.child_idx, order)
    out = set()
    for u in range(view.n):
        for e in range(int(view.child_ptr[u]), int(view.child_ptr[u + 1])):
            if keep[e]:
                out.add((view.ids[u], view.ids[int(view.child_idx[e])]))
    return out


def transitive_reduce(g: MemoryGraph) -> MemoryGraph:
    """Copy of ``g`` with every transitively implied edge removed."""
    keep = reduced_edge_set(g)
    out = g.copy_nodes()
    for c in sorted(g.parents, key=g._tau.__getitem__):
        for p in g.parents[c]:
            if (p, c) in keep:
                out._p_add_edge(p, c)
    return out


def reduce_in_place(g: MemoryGraph) -> list[tuple[str, str]]:
    """Remove transitively implied edges from ``g``; returns removed edges."""
    with g.lock:
        keep = reduced_edge_set(g)
        removed = []
        for c in sorted(g.parents, key=g._tau.__getitem__):
            for p in list(g.parents[c]):
                if (p, c) not in keep:
                    g._p_del_edge(p, c)
                    removed.append((p, c))
        return removed


def _prepare(nodes: Iterable[MemoryNode], dim: int) -> list[MemoryNode]:
    seen: set[str] = set()
    ordered = []
    for n in nodes:
        if n.is_root:
            continue
        if n.id in seen:
            raise DuplicateNodeError(n.id)
        seen.add(n.id)
        violations = validate_node(n)
        if n.embedding.shape != (dim,):
            violations.append(f"embedding dim: expected {dim}")
        if violations:
            raise ValidationError(f"invalid node {n.id}", violations)
        ordered.append(n)
    ordered.sort(key=lambda n: n.effective_time)
    for a, b in zip(ordered, ordered[1:]):
        if a.effective_time == b.effective_time:
            raise ValidationError("duplicate effective time", ["time unique"])
    return ordered


def insert_fold(
    nodes: Iterable[MemoryNode],
    dim: int,
    k_parents: int = DEFAULT_K_PARENTS,
    **kwargs,
) -> MemoryGraph:
    """Reference construction: insert every node in effective-time order."""
    g = MemoryGraph(dim, k_parents, **kwargs)
    for n in _prepare(nodes, dim):
        if n.tombstone:
            g._p_add_node(n)
        else:
            g.insert(n)
    return g


def _block_candidates(
    mat: np.ndarray,
    live: np.ndarray,
    start: int,
    stop: int,
    k: int,
) -> list[list[int]]:
    """Top-k earlier live rows for rows ``start:stop`` (row index = τ rank)."""
    scores = np.round(mat[start:stop] @ mat[:stop].T, SCORE_DECIMALS)
    out = []
    for r in range(stop - start):
        i = start + r
        if not live[i] or i == 0:
            out.append([])
            continue
        s = scores[r, :i]
        cols = np.flatnonzero(live[:i] & (s >= MIN_PARENT_SCORE))
        if cols.size > k:
            sc = s[cols]
            kth = np.partition(sc, cols.size - k)[cols.size - k]
            cols = cols[sc >= kth]
        # later τ wins ties; ranks are unique so ids never decide
        order = np.lexsort((-cols, -s[cols]))
        out.append(cols[order][:k].tolist())
    return out


def offline_build(
    nodes: Iterable[MemoryNode],
    dim: int,
    k_parents: int = DEFAULT_K_PARENTS,
    workers: int = 4,
    block: int = 256,
    **kwargs,
) -> MemoryGraph:
    """Build the graph for ``nodes`` as if inserted in effective-time order.

    Candidate retrieval for every node runs concurrently against one
    frozen matrix of all embeddings, with the temporal filter doing the
    ordering work. Pruning then runs once over τ ranks in the compiled
    kernel, which needs only already-final parent sets of earlier nodes.
    """
    ordered = _prepare(nodes, dim)
    g = MemoryGraph(dim, k_parents, **kwargs)
    n = len(ordered)
    if n == 0:
        return g
    mat = np.stack([np.asarray(x.embedding, dtype=np.float64) for x in ordered])
    live = np.array([not x.tombstone for x in ordered], dtype=bool)
    spans = [(s, min(s + block, n)) for s in range(0, n, block)]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        parts = list(pool.map(lambda sp: _block_candidates(mat, live, sp[0], sp[1], k_parents), spans))
    cand_rows = [row for part in parts for row in part]
    cptr, cidx = _csr(n, cand_rows)
    pptr, pidx = kernels.offline_edges(n, cptr, cidx)
    for x in ordered:
        g._p_add_node(x)
    for i, x in enumerate(ordered):
        if not live[i]:
            continue
        row = pidx[pptr[i] : pptr[i + 1]]
        if row.size == 0:
            g._p_add_edge(g.root_id, x.id)
        else:
            for j in row:
                g._p_add_edge(ordered[int(j)].id, x.id)
    return g


def check_invariants(g: MemoryGraph) -> list[str]:
    """Run the full structural invariant suite; returns violations."""
    v: list[str] = []
    roots = [nid for nid, n in g.nodes.items() if n.is_root]
    if roots != [g.root_id]:
        v.append(f"root: expected exactly one root, found {roots}")
    if g.parents[g.root_id]:
        v.append("root: root has incoming edges")
    try:
        topological_order(g)
    except CycleError:
        v.append("acyclic: cycle detected")
    tau = g._tau
    for c, ps in g.parents.items():
        for p in ps:
            if not tau[p] < tau[c]:
                v.append(f"temporal: edge {p}->{c} goes backward in time")
            if g.nodes[p].tombstone or g.nodes[c].tombstone:
                v.append(f"tombstone: edge {p}->{c} touches a tombstone")
            if c not in g.children[p]:
                v.append(f"adjacency: {p}->{c} missing from children map")
    for p, cs in g.children.items():
        for c in cs:
            if p not in g.parents[c]:
                v.append(f"adjacency: {p}->{c} missing from parents map")
    for nid, node in g.nodes.items():
        if node.is_root or node.tombstone:
            if node.tombstone and nid in g.index:
                v.append(f"index: tombstone {nid} still indexed")
            continue
        ps = list(g.parents[nid])
        if not ps:
            v.append(f"connectivity: live node {nid} has no parent")
        if nid not in g.index:
            v.append(f"index: live node {nid} missing from index")
        if len(ps) > 1:
            _, pruned = g._prune(ps)
            for p, why in pruned:
                v.append(f"antichain: parent {p} of {nid} {why}")
    # reachability from root over live nodes
    seen = {g.root_id}
    queue = deque([g.root_id])
    while queue:
        u = queue.popleft()
        for c in g.children[u]:
            if c not in seen:
                seen.add(c)
                queue.append(c)
    for nid in g.live_ids():
        if nid not in seen:
            v.append(f"connectivity: {nid} unreachable from root")
    return v
