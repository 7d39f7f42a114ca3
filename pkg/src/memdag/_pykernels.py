"""Pure-Python graph kernels. Same API and results as ``_ckernels``.

All graphs are passed as CSR arrays over dense integer node indices:
``indptr[i]:indptr[i + 1]`` slices ``indices`` to the neighbours of ``i``.
"""

from __future__ import annotations

from collections import deque

import numpy as np

BACKEND = "python"


def topo_order(n, indptr, indices):
    """Kahn order (smallest ready index first); ValueError on a cycle."""
    import heapq

    indptr = np.asarray(indptr, dtype=np.int64).tolist()
    indices = np.asarray(indices, dtype=np.int64).tolist()
    indeg = [0] * n
    for v in indices:
        indeg[v] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        u = heapq.heappop(ready)
        order.append(u)
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, v)
    if len(order) != n:
        raise ValueError("graph contains a cycle")
    return np.asarray(order, dtype=np.int64)


def transitive_reduction(n, indptr, indices, order):
    """Keep-mask over CSR edges: 1 iff the edge is not implied by a longer path.

    Descendant sets are Python ints used as bitsets, filled in reverse
    topological order; children of each node are scanned by increasing
    topological position so a child already covered by an earlier kept
    child's descendants is redundant.
    """
    indptr = np.asarray(indptr, dtype=np.int64).tolist()
    indices = np.asarray(indices, dtype=np.int64).tolist()
    order = np.asarray(order, dtype=np.int64).tolist()
    pos = [0] * n
    for i, u in enumerate(order):
        pos[u] = i
    desc = [0] * n
    keep = np.zeros(len(indices), dtype=np.uint8)
    for u in reversed(order):
        edges = sorted(range(indptr[u], indptr[u + 1]), key=lambda e: pos[indices[e]])
        reach = 0
        for e in edges:
            c = indices[e]
            if (reach >> c) & 1:
                continue
            keep[e] = 1
            reach |= desc[c]
        desc[u] = reach | (1 << u)
    return keep


def ancestor_closure(n, pindptr, pindices, rank, seeds, root, max_depth, max_nodes, priority=None):
    """Level-wise reverse BFS from ``seeds`` over parent edges.

    Returns ``(members, truncated, depth_used)``. ``max_depth``/``max_nodes``
    of -1 mean unbounded. ``max_nodes`` budgets ancestors beyond the seeds
    and the root; within a level, nodes with higher ``priority`` (if given),
    then later ``rank``, are admitted first. The root is appended whenever
    the result is nonempty.
    """
    pindptr = np.asarray(pindptr, dtype=np.int64).tolist()
    pindices = np.asarray(pindices, dtype=np.int64).tolist()
    rank = np.asarray(rank, dtype=np.int64).tolist()
    prio = None if priority is None else np.asarray(priority, dtype=np.float64).tolist()
    seen = bytearray(n)
    members = []
    frontier = []
    for s in seeds:
        s = int(s)
        if not seen[s]:
            seen[s] = 1
            members.append(s)
            frontier.append(s)
    if not members:
        return np.zeros(0, dtype=np.int64), False, 0
    budget = max_nodes
    depth = 0
    truncated = False
    while frontier:
        nxt = []
        for u in frontier:
            for e in range(pindptr[u], pindptr[u + 1]):
                p = pindices[e]
                if p != root and not seen[p]:
                    seen[p] = 1
                    nxt.append(p)
        if not nxt:
            break
        if max_depth >= 0 and depth >= max_depth:
            truncated = True
            break
        if prio is None:
            nxt.sort(key=lambda x: -rank[x])
        else:
            nxt.sort(key=lambda x: (-prio[x], -rank[x]))
        if budget >= 0 and len(nxt) > budget:
            nxt = nxt[:budget]
            truncated = True
        if nxt:
            depth += 1
        members.extend(nxt)
        if budget >= 0:
            budget -= len(nxt)
        if truncated:
            break
        frontier = nxt
    if not seen[root]:
        members.append(root)
    return np.asarray(members, dtype=np.int64), truncated, depth


def offline_edges(n, cand_indptr, cand_indices):
    """Sequential irreducible-parent selection over τ-ranked nodes.

    Node ``i`` may only list candidates ``< i``. A candidate is dropped
    when it is a proper ancestor of another candidate of the same node.
    Returns the parent CSR; an empty row means "attach to root".
    """
    cand_indptr = np.asarray(cand_indptr, dtype=np.int64).tolist()
    cand_indices = np.asarray(cand_indices, dtype=np.int64).tolist()
    parents = [[] for _ in range(n)]
    stamp = [-1] * n
    for i in range(n):
        cands = cand_indices[cand_indptr[i] : cand_indptr[i + 1]]
        if not cands:
            continue
        lo = min(cands)
        queue = deque()
        for c in cands:
            for p in parents[c]:
                if p >= lo and stamp[p] != i:
                    stamp[p] = i
                    queue.append(p)
        while queue:
            u = queue.popleft()
            for p in parents[u]:
                if p >= lo and stamp[p] != i:
                    stamp[p] = i
                    queue.append(p)
        parents[i] = [c for c in cands if stamp[c] != i]
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        indptr[i + 1] = indptr[i] + len(parents[i])
    flat = [p for row in parents for p in row]
    return indptr, np.asarray(flat, dtype=np.int64)


def threshold_components(sim, theta):
    """Connected components of the graph with edges where ``sim >= theta``.

    Labels are numbered by first appearance in index order.
    """
    sim = np.asarray(sim, dtype=np.float64)
    m = sim.shape[0]
    parent = list(range(m))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    rows, cols = np.nonzero(np.triu(sim >= theta, k=1))
    for i, j in zip(rows.tolist(), cols.tolist()):
        ri, rj = find(i), find(j)
        if ri != rj:
            if ri < rj:
                parent[rj] = ri
            else:
                parent[ri] = rj
    labels = np.empty(m, dtype=np.int64)
    mapping = {}
    for i in range(m):
        r = find(i)
        if r not in mapping:
            mapping[r] = len(mapping)
        labels[i] = mapping[r]
    return labels
