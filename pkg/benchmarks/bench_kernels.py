"""Time each hot kernel under the compiled and the pure-Python backend.

    python3 benchmarks/bench_kernels.py [--n 2000] [--repeat 3]

Both backends run on the same inputs and must agree; the script prints
one line per kernel with the best-of-N time for each backend.
"""

from __future__ import annotations

import argparse
import logging
import time

import numpy as np

from memdag import kernels

logger = logging.getLogger("bench_kernels")


def random_dag_csr(n: int, avg_out: float, rng: np.random.Generator):
    rows = []
    for i in range(n):
        k = min(n - i - 1, rng.poisson(avg_out))
        rows.append(sorted(rng.choice(np.arange(i + 1, n), size=k, replace=False).tolist()) if k else [])
    ptr = np.zeros(n + 1, dtype=np.int64)
    for i, r in enumerate(rows):
        ptr[i + 1] = ptr[i] + len(r)
    return ptr, np.array([c for r in rows for c in r], dtype=np.int64), rows


def transpose(n, rows):
    back = [[] for _ in range(n)]
    for p, r in enumerate(rows):
        for c in r:
            back[c].append(p)
    ptr = np.zeros(n + 1, dtype=np.int64)
    for i, r in enumerate(back):
        ptr[i + 1] = ptr[i] + len(r)
    return ptr, np.array([p for r in back for p in r], dtype=np.int64)


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000, out


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="node count")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    backends = kernels.available_backends()
    if "cython" not in backends:
        logger.warning("compiled backend unavailable; only the fallback is timed")
    rng = np.random.default_rng(args.seed)
    n = args.n
    ptr, idx, rows = random_dag_csr(n, 4.0, rng)
    pptr, pidx = transpose(n, rows)
    # parents of i are earlier ranks; rank is the index itself
    rank = np.arange(n, dtype=np.int64)
    seeds = rng.choice(n, size=5, replace=False)
    cands = [sorted(rng.choice(i, size=min(10, i), replace=False).tolist(), reverse=True) if i else [] for i in range(n)]
    cptr = np.zeros(n + 1, dtype=np.int64)
    for i, r in enumerate(cands):
        cptr[i + 1] = cptr[i] + len(r)
    cidx = np.array([c for r in cands for c in r], dtype=np.int64)
    m = min(n, 1500)
    x = rng.normal(size=(m, 32))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    sim = x @ x.T

    order = backends["python"].topo_order(n, ptr, idx)
    cases = {
        "topo_order": lambda k: k.topo_order(n, ptr, idx),
        "transitive_reduction": lambda k: k.transitive_reduction(n, ptr, idx, order),
        "ancestor_closure": lambda k: k.ancestor_closure(n, pptr, pidx, rank, seeds, 0, -1, -1, None),
        "offline_edges": lambda k: k.offline_edges(n, cptr, cidx),
        "threshold_components": lambda k: k.threshold_components(sim, 0.5),
    }
    print(f"n={n} edges={len(idx)} repeat={args.repeat}")
    print(f"{'kernel':<22}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, call in cases.items():
        py_ms, py_out = best_of(lambda: call(backends["python"]), args.repeat)
        if "cython" in backends:
            cy_ms, cy_out = best_of(lambda: call(backends["cython"]), args.repeat)
            if not same(py_out, cy_out):
                raise SystemExit(f"{name}: backends disagree")
            print(f"{name:<22}{py_ms:>12.2f}{cy_ms:>12.2f}{py_ms / cy_ms:>9.1f}x")
        else:
            print(f"{name:<22}{py_ms:>12.2f}{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
