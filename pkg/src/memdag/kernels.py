"""Backend selection for the graph kernels.

The compiled extension is used when it was built; otherwise, or when
``MEMDAG_PURE_PYTHON=1`` is set, the pure-Python implementation is used.
Both expose identical functions and produce identical results.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from . import _pykernels

logger = logging.getLogger(__name__)


def _load() -> ModuleType:
    if os.environ.get("MEMDAG_PURE_PYTHON", "") not in ("", "0"):
        return _pykernels
    try:
        from . import _ckernels
    except ImportError:
        logger.debug("compiled kernels unavailable, using pure-Python fallback")
        return _pykernels
    return _ckernels


_impl = _load()
BACKEND: str = _impl.BACKEND


def available_backends() -> dict[str, ModuleType]:
    backends = {"python": _pykernels}
    try:
        from . import _ckernels

        backends["cython"] = _ckernels
    except ImportError:
        pass
    return backends


def topo_order(n, indptr, indices):
    return _impl.topo_order(n, indptr, indices)


def transitive_reduction(n, indptr, indices, order):
    return _impl.transitive_reduction(n, indptr, indices, order)


def ancestor_closure(n, pindptr, pindices, rank, seeds, root, max_depth, max_nodes, priority=None):
    return _impl.ancestor_closure(
        n, pindptr, pindices, rank, seeds, root, max_depth, max_nodes, priority
    )


def offline_edges(n, cand_indptr, cand_indices):
    return _impl.offline_edges(n, cand_indptr, cand_indices)


def threshold_components(sim, theta):
    return _impl.threshold_components(sim, theta)
