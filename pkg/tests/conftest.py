from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from memdag.config import Config
from memdag.graph import MemoryGraph
from memdag.model import EffectiveTime, MemoryKind, MemoryNode, Provenance
from memdag.providers import MockProvider
from memdag.store import MemoryStore

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def unit(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    return v / np.linalg.norm(v)


def make_node(nid: str, wall: int, vec, seq: int | None = None, content: str | None = None, **kw) -> MemoryNode:
    return MemoryNode(
        id=nid,
        kind=kw.pop("kind", MemoryKind.EVENT),
        content=content or f"content of {nid}",
        embedding=unit(vec),
        effective_time=EffectiveTime(wall, wall if seq is None else seq),
        provenance=kw.pop("provenance", Provenance(source_turn_ids=[f"t-{nid}"], roles=["user"])),
        **kw,
    )


def random_nodes(n: int, dim: int, seed: int, clusters: int = 6) -> list[MemoryNode]:
    """Nodes whose embeddings scatter around a few centres, unique times."""
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(clusters, dim))
    nodes = []
    for i in range(n):
        vec = centres[rng.integers(clusters)] + 0.6 * rng.normal(size=dim)
        nodes.append(make_node(f"n{i:05d}", 1000 + i, vec, seq=i + 1))
    rng.shuffle(nodes)
    return nodes


def random_dag(n: int, density: float, seed: int) -> list[tuple[int, int]]:
    """Edges i -> j with i < j, each present with probability ``density``."""
    rng = random.Random(seed)
    return [(i, j) for j in range(n) for i in range(j) if rng.random() < density]


def chain_graph(dim: int = 8, n: int = 3) -> tuple[MemoryGraph, list[str]]:
    """root -> a -> b -> ... built with verbatim edges."""
    ids = [chr(ord("a") + i) for i in range(n)]
    nodes = [make_node(x, 10 * (i + 1), np.eye(dim)[i % dim]) for i, x in enumerate(ids)]
    edges = [("root", ids[0])] + list(zip(ids, ids[1:]))
    return MemoryGraph.from_edges(dim, nodes, edges), ids


@pytest.fixture
def small_cfg() -> Config:
    return Config(dim=128)


@pytest.fixture
def store(small_cfg) -> MemoryStore:
    return MemoryStore(small_cfg, MockProvider(small_cfg.dim, 0))


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
