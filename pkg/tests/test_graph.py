from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memdag.errors import (
    CycleError,
    DuplicateNodeError,
    RootOperationError,
    TombstonedNodeError,
    UnknownNodeError,
)
from memdag.graph import (
    MemoryGraph,
    check_invariants,
    insert_fold,
    offline_build,
    reduce_in_place,
    topological_order,
    transitive_reduce,
)

from . import oracles
from .conftest import chain_graph, make_node, random_dag, random_nodes, unit

DIM = 8


def e(i):
    return np.eye(DIM)[i]


def diamond():
    nodes = [make_node(x, 10 * (i + 1), e(i)) for i, x in enumerate("abcd")]
    edges = [("root", "a"), ("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]
    return MemoryGraph.from_edges(DIM, nodes, edges)


def indexed(g):
    ids = sorted(g.nodes, key=g._tau.__getitem__)
    pos = {x: i for i, x in enumerate(ids)}
    return ids, pos, [(pos[p], pos[c]) for p, c in g.edge_set()]


# -- reachability and pruning ------------------------------------------


def test_reachable_chain_and_diamond():
    g, _ = chain_graph(DIM, 2)
    assert g.reachable("a", "b") and not g.reachable("b", "a")
    d = diamond()
    assert d.reachable("a", "d") and not d.reachable("b", "c")
    with pytest.raises(UnknownNodeError):
        d.reachable("a", "zz")


@given(n=st.integers(2, 30), density=st.floats(0, 0.4), seed=st.integers(0, 999))
def test_reachable_matches_bfs_oracle(n, density, seed):
    ids = [f"v{i:02d}" for i in range(n)]
    nodes = [make_node(x, i + 1, e(i % DIM)) for i, x in enumerate(ids)]
    edges = [(ids[p], ids[c]) for p, c in random_dag(n, density, seed)]
    g = MemoryGraph.from_edges(DIM, nodes, edges)
    adj = oracles.adjacency(n, random_dag(n, density, seed))
    for a in range(n):
        for b in range(n):
            if a != b:
                assert g.reachable(ids[a], ids[b]) == oracles.reaches(adj, a, b)


def test_prune_irreducible_examples():
    g, _ = chain_graph(DIM, 3)
    assert g.prune_irreducible(["a", "b"]) == ["b"]
    assert g.prune_irreducible(["a", "b", "c"]) == ["c"]
    d = diamond()
    assert d.prune_irreducible(["b", "c"]) == ["b", "c"]


# -- insert -------------------------------------------------------------


def test_first_node_attaches_to_root():
    g = MemoryGraph(DIM)
    r = g.insert(make_node("a", 1, e(0)))
    assert r.parents_chosen == ["root"] and r.root_fallback
    assert g.candidate_parents(make_node("x", 0, e(0))) == []


def test_insert_keeps_latest_of_chain():
    g = MemoryGraph(DIM, k_parents=2)
    g.insert(make_node("A", 1, e(0)))
    g.insert(make_node("B", 2, e(0) + 0.1 * e(1)))
    assert list(g.parents["B"]) == ["A"]
    r = g.insert(make_node("v", 3, e(0) + 0.05 * e(1)))
    assert r.parents_chosen == ["B"]
    assert [p for p, _ in r.pruned] == ["A"]


def test_candidate_parents_temporal_filter_and_topk():
    g = MemoryGraph(DIM)
    g.insert(make_node("x", 1, e(0)))
    g.insert(make_node("y", 2, e(0) + e(1)))
    g.insert(make_node("z", 3, e(2)))
    g.insert(make_node("late", 9, e(3)))
    probe = make_node("v", 5, e(3) + 0.1 * e(0))
    got = [c.id for c in g.candidate_parents(probe, 2)]
    assert "late" not in got
    emb = {x: g.nodes[x].embedding for x in "xyz"}
    want = sorted("xyz", key=lambda x: -float(emb[x] @ probe.embedding))[:2]
    assert got == want


def test_insert_rejects_duplicates():
    g = MemoryGraph(DIM)
    g.insert(make_node("a", 1, e(0)))
    with pytest.raises(DuplicateNodeError):
        g.insert(make_node("a", 2, e(1)))


def test_insert_thousand_random_nodes_stays_acyclic():
    g = MemoryGraph(16)
    for n in sorted(random_nodes(1000, 16, seed=5), key=lambda n: n.effective_time):
        g.insert(n)
    assert len(topological_order(g)) == 1001
    assert check_invariants(g) == []


# -- reinsert, update, delete -------------------------------------------


def test_reinsert_is_idempotent():
    g = insert_fold(random_nodes(80, DIM, seed=1), DIM)
    before = g.edge_set()
    for nid in sorted(g.live_ids()):
        first = g.reinsert(nid).parents_chosen
        assert g.reinsert(nid).parents_chosen == first
    assert g.edge_set() == before


def test_reinsert_after_upstream_delete():
    g = MemoryGraph(DIM, k_parents=3)
    g.insert(make_node("a", 1, e(0)))
    g.insert(make_node("b", 2, e(0) + e(1)))
    g.insert(make_node("c", 3, e(1) + 0.2 * e(0)))
    assert list(g.parents["c"]) == ["b"]
    rep = g.apply_delete("b")
    assert rep.orphans == ["c"] and rep.reinsert_count == 1
    assert list(g.parents["c"]) == ["a"]
    assert check_invariants(g) == []


def test_update_leaf_and_mid_chain():
    g = MemoryGraph(DIM, k_parents=1)
    g.insert(make_node("a", 1, e(0)))
    g.insert(make_node("b", 2, e(0)))
    g.insert(make_node("c1", 3, e(0)))
    g.insert(make_node("c2", 4, e(1) + e(0) * 0.01))
    # k=1 keeps each node on its single nearest predecessor
    assert set(g.children["b"]) == {"c1"}
    g2 = MemoryGraph.from_edges(
        DIM, [g.nodes[x] for x in ("a", "b", "c1", "c2")],
        [("root", "a"), ("a", "b"), ("b", "c1"), ("b", "c2")], k_parents=1,
    )
    calls = g2.reinsert_calls
    rep = g2.apply_update("b", "new b", unit(e(0) + e(2)))
    assert rep.reinsert_count == 3 and g2.reinsert_calls - calls == 3
    assert g2.nodes["b"].effective_time.as_tuple() == (2, 2)
    leaf = g2.apply_update("c2", "leaf", unit(e(3)))
    assert leaf.reinsert_count == 1
    assert check_invariants(g2) == []


def test_delete_middle_and_leaf():
    g, _ = chain_graph(DIM, 2)
    rep = g.apply_delete("a")
    assert rep.orphans == ["b"] and list(g.parents["b"]) == ["root"]
    assert g.nodes["a"].tombstone and "a" not in g.index
    assert g.apply_delete("b").reinsert_count == 0
    assert check_invariants(g) == []


def test_root_and_tombstone_guards():
    g, _ = chain_graph(DIM, 2)
    with pytest.raises(RootOperationError):
        g.apply_delete("root")
    g.apply_delete("a")
    with pytest.raises(TombstonedNodeError):
        g.apply_update("a", "x", unit(e(0)))
    with pytest.raises(UnknownNodeError):
        g.reinsert("nope")


def test_deleted_node_never_returned():
    g = insert_fold(random_nodes(60, DIM, seed=2), DIM)
    victim = sorted(g.live_ids())[7]
    g.apply_delete(victim)
    probe = make_node("p", 10**9, g.nodes[victim].embedding)
    assert victim not in [c.id for c in g.candidate_parents(probe, 60)]
    assert all(victim not in (p, c) for p, c in g.edge_set())


# -- whole-graph operations ----------------------------------------------


def test_offline_build_trivial_inputs():
    assert offline_build([], DIM).edge_set() == set()
    g = offline_build([make_node("a", 1, e(0))], DIM)
    assert g.edge_set() == {("root", "a")}


@pytest.mark.parametrize("workers,block", [(1, 1000), (4, 64)])
def test_offline_equals_fold_on_500_nodes(workers, block):
    nodes = random_nodes(500, 16, seed=11)
    assert offline_build(nodes, 16, workers=workers, block=block).edge_set() == insert_fold(nodes, 16).edge_set()


def test_offline_equals_fold_with_tombstones_and_ties():
    nodes = random_nodes(120, DIM, seed=4)
    for n in nodes[::9]:
        n.tombstone = True
    # exact duplicates force score ties
    for a, b in zip(nodes[1::10], nodes[2::10]):
        b.embedding = a.embedding.copy()
    assert offline_build(nodes, DIM, k_parents=4).edge_set() == insert_fold(nodes, DIM, k_parents=4).edge_set()


def test_transitive_reduce_shortcut_and_diamond():
    nodes = [make_node(x, i + 1, e(i)) for i, x in enumerate(["pp", "p", "v"])]
    g = MemoryGraph.from_edges(DIM, nodes, [("root", "pp"), ("pp", "p"), ("p", "v"), ("pp", "v")])
    assert transitive_reduce(g).edge_set() == {("root", "pp"), ("pp", "p"), ("p", "v")}
    d = diamond()
    assert transitive_reduce(d).edge_set() == d.edge_set()


@given(n=st.integers(1, 40), density=st.floats(0, 0.4), seed=st.integers(0, 999))
@settings(max_examples=60)
def test_transitive_reduce_matches_oracle_and_is_fixpoint(n, density, seed):
    ids = [f"v{i:02d}" for i in range(n)]
    nodes = [make_node(x, i + 1, e(i % DIM)) for i, x in enumerate(ids)]
    raw = random_dag(n, density, seed)
    g = MemoryGraph.from_edges(DIM, nodes, [(ids[p], ids[c]) for p, c in raw])
    once = transitive_reduce(g)
    assert once.edge_set() == {(ids[p], ids[c]) for p, c in oracles.transitive_reduction(n, raw)}
    assert transitive_reduce(once).edge_set() == once.edge_set()
    removed = reduce_in_place(g)
    assert g.edge_set() == once.edge_set() and len(removed) == len(raw) - len(once.edge_set())


def test_cycle_is_reported():
    nodes = [make_node(x, i + 1, e(i)) for i, x in enumerate("ab")]
    g = MemoryGraph.from_edges(DIM, nodes, [("root", "a"), ("a", "b"), ("b", "a")])
    with pytest.raises(CycleError):
        topological_order(g)
    assert any("acyclic" in v for v in check_invariants(g))


def test_thread_of_paths_and_limit():
    g, _ = chain_graph(DIM, 2)
    assert g.thread_of("b").paths == [["root", "a", "b"]]
    d = diamond()
    tp = d.thread_of("d")
    assert sorted(tp.paths) == [["root", "a", "b", "d"], ["root", "a", "c", "d"]] and not tp.truncated
    capped = d.thread_of("d", limit=1)
    assert len(capped.paths) == 1 and capped.truncated
    for path in tp.paths:
        times = [d.nodes[x].effective_time for x in path]
        assert times == sorted(times)


# -- invariants under random operation sequences ----------------------------


ops = st.lists(st.tuples(st.sampled_from(["insert", "update", "delete", "reinsert"]), st.integers(0, 10**6)),
               min_size=1, max_size=60)


@given(seq=ops, seed=st.integers(0, 999))
@settings(max_examples=80)
def test_random_operations_preserve_invariants(seq, seed):
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(4, DIM))
    g = MemoryGraph(DIM, k_parents=4)
    twin = MemoryGraph(DIM, k_parents=4)
    t = 0
    for op, pick in seq:
        live = sorted(g.live_ids())
        if op == "insert" or not live:
            t += 1
            vec = centres[pick % 4] + 0.5 * rng.normal(size=DIM)
            # insert out of τ order half the time
            wall = t if pick % 2 else max(1, t - pick % 7)
            n = make_node(f"n{t}", wall, vec, seq=t)
            g.insert(n)
            twin.insert(make_node(f"n{t}", wall, vec, seq=t))
            continue
        target = live[pick % len(live)]
        if op == "update":
            emb = unit(centres[(pick // 4) % 4] + rng.normal(size=DIM))
            g.apply_update(target, "changed", emb)
            twin.apply_update(target, "changed", emb)
        elif op == "delete":
            g.apply_delete(target)
            twin.apply_delete(target)
        else:
            g.reinsert(target)
            twin.reinsert(target)
        assert check_invariants(g) == []
    assert check_invariants(g) == []
    assert g.edge_set() == twin.edge_set()
    # parent antichain through the exhaustive oracle as well
    for v in g.live_ids():
        ps = list(g.parents[v])
        for p in ps:
            anc = oracles.ancestors({k: list(x) for k, x in g.parents.items()}, v)
            assert p in anc
            assert not any(p in oracles.ancestors({k: list(x) for k, x in g.parents.items()}, q) for q in ps if q != p)
