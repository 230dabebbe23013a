"""Vector arithmetic and joint similarity in the weighted concatenated space.

An object with per-modality unit vectors ``o_0 .. o_{m-1}`` is mapped to the
concatenated vector ``[w_0 * o_0, ..., w_{m-1} * o_{m-1}]``. The inner product
of two such vectors is ``sum_i w_i**2 * <a_i, b_i>``, so the joint score can be
computed per modality without materialising the concatenation.

Vectors are stored as float32; every reduction accumulates in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from mstm.errors import UsageError

__all__ = [
    "MultiVector",
    "UsageError",
    "WeightVector",
    "concat_norm_sq",
    "concatenate",
    "inner_product",
    "joint_similarity",
    "sme",
    "topk_desc",
    "topk_rows",
]


@dataclass(frozen=True)
class WeightVector:
    """Non-negative per-modality weights ``w_i``.

    Files and the CLI exchange squared weights (``w_i**2``); use
    :meth:`from_squared` / :attr:`squared` at those boundaries.
    """

    omega: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=np.float64).reshape(-1)
        if w.size == 0:
            raise UsageError("weight vector is empty")
        if not np.all(np.isfinite(w)):
            raise UsageError(f"weights must be finite, got {w.tolist()}")
        if np.any(w < 0):
            raise UsageError(f"weights must be non-negative, got {w.tolist()}")
        if not np.any(w > 0):
            raise UsageError("at least one weight must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)

    @classmethod
    def from_squared(cls, squared: Sequence[float]) -> "WeightVector":
        sq = np.asarray(squared, dtype=np.float64)
        if np.any(sq < 0):
            raise UsageError(f"squared weights must be non-negative, got {sq.tolist()}")
        return cls(np.sqrt(sq))

    @classmethod
    def uniform(cls, m: int) -> "WeightVector":
        return cls(np.ones(m))

    @classmethod
    def one_hot(cls, m: int, i: int) -> "WeightVector":
        w = np.zeros(m)
        w[i] = 1.0
        return cls(w)

    @property
    def m(self) -> int:
        return self.omega.size

    @property
    def squared(self) -> np.ndarray:
        return self.omega * self.omega

    def masked_squared(self, mask: Optional[Sequence[bool]] = None) -> np.ndarray:
        """Squared weights with absent modalities zeroed."""
        sq = self.squared.copy()
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != sq.shape:
                raise UsageError(f"mask has {mask.size} slots, weights have {sq.size}")
            sq[~mask] = 0.0
        return sq

    def __len__(self) -> int:
        return self.m


@dataclass(frozen=True)
class MultiVector:
    """One object or query: an optional vector per modality."""

    vectors: tuple
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        vecs = tuple(
            None if v is None else np.ascontiguousarray(v, dtype=np.float32).reshape(-1)
            for v in self.vectors
        )
        mask = np.array([v is not None for v in vecs], dtype=bool)
        if not mask.any():
            raise UsageError("multi-vector needs at least one present modality")
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "mask", mask)

    @property
    def m(self) -> int:
        return len(self.vectors)

    def __getitem__(self, i: int):
        return self.vectors[i]


def inner_product(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.astype(np.float64), b.astype(np.float64)))


def joint_similarity(a: MultiVector, b: MultiVector, w: WeightVector) -> float:
    """Weighted sum of per-modality inner products over jointly present slots."""
    if a.m != b.m or a.m != w.m:
        raise UsageError(f"schema mismatch: m={a.m}, m={b.m}, weights m={w.m}")
    sq = w.squared
    total = 0.0
    for i in range(a.m):
        if a[i] is None or b[i] is None:
            continue
        total += sq[i] * inner_product(a[i], b[i])
    return total


def concat_norm_sq(w: WeightVector, mask: Optional[Sequence[bool]] = None) -> float:
    """Squared norm ``C`` of a concatenated unit multi-vector under ``mask``."""
    return float(w.masked_squared(mask).sum())


def sme(truth_target, result_target) -> float:
    """Similarity measurement error between two target-modality vectors."""
    return 1.0 - inner_product(truth_target, result_target)


def concatenate(vectors: Sequence[Optional[np.ndarray]], w: WeightVector) -> np.ndarray:
    """Materialise ``[w_0 * v_0, ...]``; absent slots become zero blocks.

    Absent slots need a known width, so every entry must be an array; pass
    ``np.zeros(d_i)`` for a missing modality.
    """
    if len(vectors) != w.m:
        raise UsageError(f"{len(vectors)} vectors for {w.m} weights")
    parts = [w.omega[i] * np.asarray(v, dtype=np.float64) for i, v in enumerate(vectors)]
    return np.concatenate(parts)


def topk_desc(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, descending, ties to the lower index."""
    scores = np.asarray(scores)
    n = scores.size
    k = min(k, n)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k < n:
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:k]]


def topk_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise :func:`topk_desc` for a 2-d score matrix."""
    scores = np.asarray(scores)
    r, n = scores.shape
    k = min(k, n)
    if k <= 0:
        return np.empty((r, 0), dtype=np.int64)
    if k == n:
        part = np.tile(np.arange(n), (r, 1))
    else:
        part = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    vals = np.take_along_axis(scores, part, axis=1)
    order = np.lexsort((part, -vals), axis=1)
    out = np.take_along_axis(part, order, axis=1)
    # rows with a tie straddling the k-th place need the exact tie-break
    kth = np.take_along_axis(scores, out[:, -1:], axis=1)
    tied = np.flatnonzero((scores >= kth).sum(axis=1) > k)
    for row in tied:
        out[row] = topk_desc(scores[row], k)
    return out.astype(np.int64)
