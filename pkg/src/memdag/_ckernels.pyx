# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled graph kernels. Same API and results as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t, uint8_t
from libc.stdlib cimport malloc, free, calloc
from libc.string cimport memset

cnp.import_array()

BACKEND = "cython"

# bitset descendant sets up to this many bytes, stamped DFS beyond
cdef Py_ssize_t BITSET_BYTES_LIMIT = 256 * 1024 * 1024


def set_bitset_limit(Py_ssize_t nbytes):
    """Change the bitset memory cap; returns the previous value."""
    global BITSET_BYTES_LIMIT
    old = BITSET_BYTES_LIMIT
    BITSET_BYTES_LIMIT = nbytes
    return old


def topo_order(Py_ssize_t n, indptr, indices):
    cdef int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef int64_t[::1] indeg = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] order = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] heap = np.empty(n + 1, dtype=np.int64)
    cdef Py_ssize_t hsize = 0, count = 0, e, i, j, k, child
    cdef int64_t u, v, tmp
    for e in range(ix.shape[0]):
        indeg[ix[e]] += 1
    for i in range(n):
        if indeg[i] == 0:
            # sift-up insert into min-heap
            heap[hsize] = i
            j = hsize
            hsize += 1
            while j > 0 and heap[(j - 1) // 2] > heap[j]:
                tmp = heap[j]; heap[j] = heap[(j - 1) // 2]; heap[(j - 1) // 2] = tmp
                j = (j - 1) // 2
    while hsize > 0:
        u = heap[0]
        hsize -= 1
        heap[0] = heap[hsize]
        j = 0
        while True:
            k = 2 * j + 1
            if k >= hsize:
                break
            child = k
            if k + 1 < hsize and heap[k + 1] < heap[k]:
                child = k + 1
            if heap[child] < heap[j]:
                tmp = heap[j]; heap[j] = heap[child]; heap[child] = tmp
                j = child
            else:
                break
        order[count] = u
        count += 1
        for e in range(ip[u], ip[u + 1]):
            v = ix[e]
            indeg[v] -= 1
            if indeg[v] == 0:
                heap[hsize] = v
                j = hsize
                hsize += 1
                while j > 0 and heap[(j - 1) // 2] > heap[j]:
                    tmp = heap[j]; heap[j] = heap[(j - 1) // 2]; heap[(j - 1) // 2] = tmp
                    j = (j - 1) // 2
    if count != n:
        raise ValueError("graph contains a cycle")
    return np.asarray(order)


cdef void _sort_by_key_edges(int64_t* items, Py_ssize_t m, int64_t* key) noexcept nogil:
    # items are edge ids, key is indexed by edge id
    cdef Py_ssize_t i, j
    cdef int64_t x
    for i in range(1, m):
        x = items[i]
        j = i - 1
        while j >= 0 and key[items[j]] > key[x]:
            items[j + 1] = items[j]
            j -= 1
        items[j + 1] = x


def transitive_reduction(Py_ssize_t n, indptr, indices, order):
    cdef int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef int64_t[::1] od = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t m = ix.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] keep_arr = np.zeros(m, dtype=np.uint8)
    cdef uint8_t[::1] keep = keep_arr
    if n == 0 or m == 0:
        return keep_arr
    cdef int64_t[::1] pos = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i, e, w, t, deg
    cdef int64_t u, c
    for i in range(n):
        pos[od[i]] = i
    cdef Py_ssize_t words = (n + 63) // 64
    cdef int64_t* edges = <int64_t*> malloc(sizeof(int64_t) * (m + 1))
    if edges == NULL:
        raise MemoryError()
    cdef uint64_t* desc
    cdef uint64_t* reach
    cdef int64_t* stamp
    cdef int64_t* stack
    cdef int64_t* epos = <int64_t*> malloc(sizeof(int64_t) * (m + 1))
    if epos == NULL:
        free(edges)
        raise MemoryError()
    cdef Py_ssize_t sp, top, limit
    # edge -> position of its head; lets us sort edge ids by child position
    for e in range(m):
        epos[e] = pos[ix[e]]
    try:
        if words * n * 8 <= BITSET_BYTES_LIMIT:
            desc = <uint64_t*> calloc(words * n, sizeof(uint64_t))
            reach = <uint64_t*> malloc(words * sizeof(uint64_t))
            if desc == NULL or reach == NULL:
                free(desc); free(reach)
                raise MemoryError()
            with nogil:
                for t in range(n - 1, -1, -1):
                    u = od[t]
                    deg = ip[u + 1] - ip[u]
                    for i in range(deg):
                        edges[i] = ip[u] + i
                    _sort_by_key_edges(edges, deg, epos)
                    memset(reach, 0, words * sizeof(uint64_t))
                    for i in range(deg):
                        e = edges[i]
                        c = ix[e]
                        if (reach[c >> 6] >> (c & 63)) & 1:
                            continue
                        keep[e] = 1
                        for w in range(words):
                            reach[w] |= desc[c * words + w]
                    reach[u >> 6] |= (<uint64_t> 1) << (u & 63)
                    for w in range(words):
                        desc[u * words + w] = reach[w]
            free(desc); free(reach)
        else:
            stamp = <int64_t*> malloc(sizeof(int64_t) * n)
            stack = <int64_t*> malloc(sizeof(int64_t) * (n + 1))
            if stamp == NULL or stack == NULL:
                free(stamp); free(stack)
                raise MemoryError()
            with nogil:
                for i in range(n):
                    stamp[i] = -1
                for t in range(n):
                    u = od[t]
                    deg = ip[u + 1] - ip[u]
                    if deg == 0:
                        continue
                    for i in range(deg):
                        edges[i] = ip[u] + i
                    _sort_by_key_edges(edges, deg, epos)
                    limit = epos[edges[deg - 1]]
                    for i in range(deg):
                        e = edges[i]
                        c = ix[e]
                        if stamp[c] == u:
                            continue
                        keep[e] = 1
                        stamp[c] = u
                        sp = 0
                        stack[sp] = c
                        sp += 1
                        while sp > 0:
                            sp -= 1
                            top = stack[sp]
                            for w in range(ip[top], ip[top + 1]):
                                c = ix[w]
                                if stamp[c] != u and pos[c] <= limit:
                                    stamp[c] = u
                                    stack[sp] = c
                                    sp += 1
            free(stamp); free(stack)
    finally:
        free(edges)
        free(epos)
    return keep_arr


def ancestor_closure(Py_ssize_t n, pindptr, pindices, rank, seeds, Py_ssize_t root,
                     Py_ssize_t max_depth, Py_ssize_t max_nodes, priority=None):
    cdef int64_t[::1] ip = np.ascontiguousarray(pindptr, dtype=np.int64)
    cdef int64_t[::1] ix = np.ascontiguousarray(pindices, dtype=np.int64)
    cdef int64_t[::1] rk = np.ascontiguousarray(rank, dtype=np.int64)
    cdef int64_t[::1] sd = np.ascontiguousarray(seeds, dtype=np.int64)
    cdef uint8_t[::1] seen = np.zeros(n, dtype=np.uint8)
    cdef int64_t[::1] members = np.empty(n + 1, dtype=np.int64)
    cdef Py_ssize_t count = 0, fstart = 0, fend, nstart, i, e, budget = max_nodes, depth = 0
    cdef int64_t u, p
    cdef bint truncated = False
    for i in range(sd.shape[0]):
        u = sd[i]
        if not seen[u]:
            seen[u] = 1
            members[count] = u
            count += 1
    if count == 0:
        return np.zeros(0, dtype=np.int64), False, 0
    fend = count
    while fend > fstart:
        nstart = count
        for i in range(fstart, fend):
            u = members[i]
            for e in range(ip[u], ip[u + 1]):
                p = ix[e]
                if p != root and not seen[p]:
                    seen[p] = 1
                    members[count] = p
                    count += 1
        if count == nstart:
            break
        if max_depth >= 0 and depth >= max_depth:
            count = nstart
            truncated = True
            break
        level = np.asarray(members[nstart:count]).copy()
        if priority is None:
            keys = -np.asarray(rk)[level]
            level = level[np.argsort(keys, kind="stable")]
        else:
            pr = np.asarray(priority, dtype=np.float64)[level]
            level = level[np.lexsort((-np.asarray(rk)[level], -pr))]
        if budget >= 0 and level.shape[0] > budget:
            level = level[:budget]
            truncated = True
        for i in range(level.shape[0]):
            members[nstart + i] = level[i]
        count = nstart + level.shape[0]
        if level.shape[0] > 0:
            depth += 1
        if budget >= 0:
            budget -= level.shape[0]
        if truncated:
            break
        fstart = nstart
        fend = count
    if not seen[root]:
        members[count] = root
        count += 1
    return np.asarray(members[:count]).copy(), bool(truncated), depth


def offline_edges(Py_ssize_t n, cand_indptr, cand_indices):
    cdef int64_t[::1] cp = np.ascontiguousarray(cand_indptr, dtype=np.int64)
    cdef int64_t[::1] cx = np.ascontiguousarray(cand_indices, dtype=np.int64)
    cdef Py_ssize_t total = cx.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_ptr = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_idx = np.empty(max(total, 1), dtype=np.int64)
    cdef int64_t[::1] pp = out_ptr
    cdef int64_t[::1] px = out_idx
    cdef int64_t[::1] stamp = np.full(max(n, 1), -1, dtype=np.int64)
    cdef int64_t[::1] queue = np.empty(max(n, 1), dtype=np.int64)
    cdef Py_ssize_t i, j, e, qh, qt, w
    cdef int64_t c, p, u, lo
    with nogil:
        w = 0
        for i in range(n):
            pp[i] = w
            if cp[i + 1] == cp[i]:
                continue
            lo = cx[cp[i]]
            for j in range(cp[i], cp[i + 1]):
                if cx[j] < lo:
                    lo = cx[j]
            qh = 0
            qt = 0
            for j in range(cp[i], cp[i + 1]):
                c = cx[j]
                for e in range(pp[c], pp[c + 1]):
                    p = px[e]
                    if p >= lo and stamp[p] != i:
                        stamp[p] = i
                        queue[qt] = p
                        qt += 1
            while qh < qt:
                u = queue[qh]
                qh += 1
                for e in range(pp[u], pp[u + 1]):
                    p = px[e]
                    if p >= lo and stamp[p] != i:
                        stamp[p] = i
                        queue[qt] = p
                        qt += 1
            for j in range(cp[i], cp[i + 1]):
                c = cx[j]
                if stamp[c] != i:
                    px[w] = c
                    w += 1
        pp[n] = w
    return out_ptr, out_idx[:w].copy()


def threshold_components(sim, double theta):
    cdef double[:, ::1] s = np.ascontiguousarray(sim, dtype=np.float64)
    cdef Py_ssize_t m = s.shape[0], i, j
    cdef int64_t[::1] parent = np.arange(m, dtype=np.int64)
    cdef int64_t ri, rj
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels = np.empty(m, dtype=np.int64)
    cdef int64_t[::1] lab = labels
    cdef int64_t[::1] mapping = np.full(max(m, 1), -1, dtype=np.int64)
    cdef int64_t nxt = 0
    with nogil:
        for i in range(m):
            for j in range(i + 1, m):
                if s[i, j] >= theta:
                    ri = _find(parent, i)
                    rj = _find(parent, j)
                    if ri != rj:
                        if ri < rj:
                            parent[rj] = ri
                        else:
                            parent[ri] = rj
        for i in range(m):
            ri = _find(parent, i)
            if mapping[ri] < 0:
                mapping[ri] = nxt
                nxt += 1
            lab[i] = mapping[ri]
    return labels


cdef inline int64_t _find(int64_t[::1] parent, int64_t x) noexcept nogil:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x
