"""Threaded DAG long-term memory for conversational agents."""

from .errors import MemDagError
from .graph import MemoryGraph, check_invariants, offline_build, transitive_reduce
from .model import EffectiveTime, MemoryKind, MemoryNode, Provenance, time_less

__version__ = "0.1.0"

__all__ = [
    "EffectiveTime",
    "MemDagError",
    "MemoryGraph",
    "MemoryKind",
    "MemoryNode",
    "Provenance",
    "check_invariants",
    "offline_build",
    "time_less",
    "transitive_reduce",
]
