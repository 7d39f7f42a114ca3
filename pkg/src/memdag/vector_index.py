"""Exact cosine similarity index over node embeddings.

The flat index keeps one row per id in a growable matrix and answers
top-k queries with a full scan. Results are ordered by
``(score desc, effective_time desc, id asc)`` so every consumer sees the
same ranking for the same store contents.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import ValidationError
from .model import NORM_TOLERANCE, EffectiveTime

# scores are rounded before ranking so that BLAS blocking differences
# (which depend on the row count) cannot flip near-ties
SCORE_DECIMALS = 12


@dataclass(frozen=True)
class ScoredId:
    id: str
    score: float

    def to_dict(self) -> dict:
        return {"id": self.id, "score": self.score}


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def normalize(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValidationError("cannot normalize a zero vector")
    return v / n


class FlatIndex:
    def __init__(self, dim: int, capacity: int = 256):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._ids: list[str] = []
        self._row: dict[str, int] = {}
        self._mat = np.zeros((capacity, dim), dtype=np.float64)
        self._alive = np.zeros(capacity, dtype=bool)
        self._wall = np.zeros(capacity, dtype=np.int64)
        self._seq = np.zeros(capacity, dtype=np.int64)
        self._clips = np.zeros(capacity, dtype=bool)
        self._readonly = False

    def __len__(self) -> int:
        return int(self._alive[: len(self._ids)].sum())

    def __contains__(self, node_id: str) -> bool:
        row = self._row.get(node_id)
        return row is not None and bool(self._alive[row])

    def ids(self) -> list[str]:
        n = len(self._ids)
        return [self._ids[i] for i in np.flatnonzero(self._alive[:n])]

    def vector(self, node_id: str) -> np.ndarray:
        row = self._row[node_id]
        return self._mat[row].copy()

    def _check(self, vec) -> np.ndarray:
        v = np.asarray(vec, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] != self.dim:
            raise ValidationError(f"dimension mismatch: expected {self.dim}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("embedding contains nan/inf")
        if abs(float(np.linalg.norm(v)) - 1.0) > NORM_TOLERANCE:
            raise ValidationError("embedding must be unit length")
        return v

    def _grow(self) -> None:
        cap = self._mat.shape[0] * 2
        for name in ("_mat", "_alive", "_wall", "_seq", "_clips"):
            old = getattr(self, name)
            shape = (cap,) + old.shape[1:]
            new = np.zeros(shape, dtype=old.dtype)
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def upsert(
        self,
        node_id: str,
        vec,
        effective_time: EffectiveTime,
        has_clips: bool = False,
    ) -> None:
        if self._readonly:
            raise RuntimeError("index snapshot is read-only")
        v = self._check(vec)
        row = self._row.get(node_id)
        if row is None:
            row = len(self._ids)
            if row >= self._mat.shape[0]:
                self._grow()
            self._ids.append(node_id)
            self._row[node_id] = row
        self._mat[row] = v
        self._alive[row] = True
        self._wall[row] = effective_time.wall_ms
        self._seq[row] = effective_time.seq
        self._clips[row] = has_clips

    def remove(self, node_id: str) -> None:
        if self._readonly:
            raise RuntimeError("index snapshot is read-only")
        row = self._row.get(node_id)
        if row is not None:
            self._alive[row] = False

    def scores(self, query) -> np.ndarray:
        """Rounded cosine of ``query`` against every row (dead rows included)."""
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self.dim:
            raise ValidationError(f"dimension mismatch: expected {self.dim}, got {q.shape}")
        n = len(self._ids)
        return np.round(self._mat[:n] @ q, SCORE_DECIMALS)

    def top_k(
        self,
        query,
        k: int,
        *,
        before: EffectiveTime | None = None,
        exclude: Iterable[str] = (),
        require_clips: bool = False,
        predicate: Callable[[str], bool] | None = None,
        min_score: float | None = None,
    ) -> list[ScoredId]:
        if k < 1:
            raise ValueError("k must be >= 1")
        n = len(self._ids)
        s = self.scores(query)
        if n == 0:
            return []
        mask = self._alive[:n].copy()
        if before is not None:
            wall, seq = self._wall[:n], self._seq[:n]
            mask &= (wall < before.wall_ms) | ((wall == before.wall_ms) & (seq < before.seq))
        if require_clips:
            mask &= self._clips[:n]
        if min_score is not None:
            mask &= s >= min_score
        for node_id in exclude:
            row = self._row.get(node_id)
            if row is not None:
                mask[row] = False
        rows = np.flatnonzero(mask)
        if predicate is not None:
            rows = np.array([r for r in rows if predicate(self._ids[r])], dtype=np.int64)
        if rows.size == 0:
            return []
        if rows.size > k:
            # everything tied with the k-th best score survives to the exact sort
            kth = np.partition(s[rows], rows.size - k)[rows.size - k]
            rows = rows[s[rows] >= kth]
        ranked = sorted(
            rows.tolist(),
            key=lambda r: (-s[r], -self._wall[r], -self._seq[r], self._ids[r]),
        )
        return [ScoredId(self._ids[r], float(s[r])) for r in ranked[:k]]

    def frozen(self) -> FlatIndex:
        """Immutable point-in-time copy for concurrent readers."""
        snap = FlatIndex.__new__(FlatIndex)
        n = len(self._ids)
        snap.dim = self.dim
        snap._ids = list(self._ids)
        snap._row = dict(self._row)
        snap._mat = self._mat[:n].copy() if n else np.zeros((1, self.dim))
        snap._alive = self._alive[:n].copy() if n else np.zeros(1, dtype=bool)
        snap._wall = self._wall[:n].copy() if n else np.zeros(1, dtype=np.int64)
        snap._seq = self._seq[:n].copy() if n else np.zeros(1, dtype=np.int64)
        snap._clips = self._clips[:n].copy() if n else np.zeros(1, dtype=bool)
        snap._readonly = True
        return snap
