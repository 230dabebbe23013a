"""Merging-free joint search on a fused index, with exact incremental pruning.

The result pool ``R`` holds ``l`` vertices sorted by joint score. Each round
visits the best unvisited member and offers its neighbours to the pool; a
neighbour enters by evicting the worst member when it scores strictly higher.

With pruning on, a neighbour's modalities are scanned one at a time. Because
every modality vector is unit length, after scanning some modalities the
score is bounded above by ``C - sum_scanned w_i**2 * (1 - ip_i)`` with
``C = sum_present w_i**2``. Once the pool's worst score reaches that bound
the neighbour cannot enter and the remaining modalities are skipped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from mstm import _kernels as K
from mstm.core import MultiVector, WeightVector, concat_norm_sq
from mstm.errors import UsageError
from mstm.index import FusedIndex
from mstm.io import MultiModalDataset, QueryBatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchParams:
    k: int = 10
    l: Optional[int] = None
    rng_seed: int = 0
    pruning: bool = True
    seed_only_init: bool = False
    paper_order: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise UsageError(f"k must be >= 1, got {self.k}", module="search")
        if self.l is not None and self.l < self.k:
            raise UsageError(f"l ({self.l}) must be >= k ({self.k})", module="search")

    def pool_size(self, n: int) -> int:
        l = self.l if self.l is not None else 20 * self.k
        if l > n:
            if self.l is not None:
                log.warning("l=%d exceeds n=%d; clamped to n", l, n)
            l = n
        return l


@dataclass
class SearchOutcome:
    ids: np.ndarray
    scores: np.ndarray
    visited: int = 0
    evaluations: int = 0
    pruned: int = 0
    modality_scans: int = 0
    trace: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Exact:
    score: float


@dataclass(frozen=True)
class Pruned:
    after_x_modalities: int


PruneResult = Union[Exact, Pruned]


def pruned_joint_ip(q: MultiVector, u: MultiVector, w: WeightVector, threshold: float,
                    order=None) -> PruneResult:
    """Incrementally bound ``IP(q, u)``; stop as soon as ``threshold >= bound``.

    The last modality is never used to prune: after it the exact score is
    returned and the caller compares it against the threshold.
    """
    if q.m != w.m or u.m != w.m:
        raise UsageError(f"schema mismatch: q.m={q.m}, u.m={u.m}, weights m={w.m}", module="search")
    mask = q.mask & u.mask
    sq = w.masked_squared(mask)
    present = [i for i in (order if order is not None else range(w.m)) if sq[i] > 0]
    bound = concat_norm_sq(w, mask)
    ips = {}
    for x, i in enumerate(present, start=1):
        ips[i] = float(np.dot(q[i].astype(np.float64), u[i].astype(np.float64)))
        bound -= sq[i] * (1.0 - ips[i])
        if x < len(present) and threshold >= bound + K.PRUNE_SLACK:
            return Pruned(x)
    return Exact(float(sum(sq[i] * ips[i] for i in sorted(ips))))


def scan_order(data: MultiModalDataset, w: WeightVector, sample: int = 256,
               rng_seed: int = 0) -> np.ndarray:
    """Modalities by descending ``w_i**2 * E||a_i - b_i||**2`` over sampled pairs."""
    rng = np.random.default_rng(rng_seed)
    n = data.n
    if n < 2:
        return np.arange(data.m, dtype=np.int64)
    a = rng.integers(0, n, size=sample)
    b = rng.integers(0, n, size=sample)
    sq = w.squared
    contrib = np.empty(data.m)
    for i, v in enumerate(data.vectors):
        d = v[a].astype(np.float64) - v[b].astype(np.float64)
        contrib[i] = sq[i] * np.mean(np.sum(d * d, axis=1))
    return np.lexsort((np.arange(data.m), -contrib)).astype(np.int64)


class Searcher:
    """Query-time state for one index: CSR arrays, scan order, data layout."""

    def __init__(self, index: FusedIndex, data: MultiModalDataset,
                 weights: WeightVector | None = None, paper_order: bool = False):
        if index.n != data.n:
            raise UsageError(f"index has n={index.n}, dataset n={data.n}", module="search")
        self.index = index
        self.data = data
        self.weights = weights if weights is not None else index.weights
        if self.weights.m != data.m:
            raise UsageError(
                f"weights have m={self.weights.m}, index/dataset have m={data.m}", module="search"
            )
        self.X = data.concat
        self.offsets = data.offsets
        self.indptr = np.ascontiguousarray(index.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(index.indices, dtype=np.int64)
        self.order = (
            np.arange(data.m, dtype=np.int64) if paper_order else scan_order(data, self.weights)
        )

    def _init_ids(self, l: int, params: SearchParams, qid: int) -> np.ndarray:
        seed = self.index.seed
        if params.seed_only_init or l <= 1:
            return np.array([seed], dtype=np.int64)
        n = self.data.n
        rng = np.random.default_rng([params.rng_seed, qid])
        rest = rng.choice(n - 1, size=l - 1, replace=False)
        rest[rest >= seed] += 1
        return np.concatenate([[seed], rest]).astype(np.int64)

    def search(self, q: MultiVector, params: SearchParams, qid: int = 0,
               trace: bool = False) -> SearchOutcome:
        if q.m != self.data.m:
            raise UsageError(f"query has m={q.m}, dataset m={self.data.m}", module="search")
        qvec = np.zeros(self.X.shape[1], dtype=np.float32)
        for i in range(q.m):
            if q[i] is not None:
                lo, hi = self.offsets[i], self.offsets[i + 1]
                if q[i].size != hi - lo:
                    raise UsageError(
                        f"query modality {i} has dim {q[i].size}, expected {hi - lo}", module="search"
                    )
                qvec[lo:hi] = q[i]
        w2 = self.weights.masked_squared(q.mask)
        if not np.any(w2 > 0):
            raise UsageError("query has no modality with positive weight", module="search")
        l = params.pool_size(self.data.n)
        init = self._init_ids(l, params, qid)
        stats = np.zeros(5, dtype=np.int64)
        ids, scores, tr = K.greedy_search(
            self.X, self.offsets, w2, self.order, qvec, self.indptr, self.indices,
            init, l, params.pruning, trace, stats,
        )
        k = min(params.k, ids.size)
        return SearchOutcome(
            ids[:k].copy(), scores[:k].copy(),
            visited=int(stats[0]), evaluations=int(stats[1]), pruned=int(stats[2]),
            modality_scans=int(stats[3]), trace=tr if trace else None,
        )

    def search_batch(self, queries: QueryBatch, params: SearchParams) -> list:
        return [self.search(queries.query(j), params, qid=j) for j in range(queries.nq)]


def joint_search(index: FusedIndex, q: MultiVector, w: WeightVector | None,
                 params: SearchParams, data: MultiModalDataset, trace: bool = False) -> SearchOutcome:
    """One-shot search. For many queries build a :class:`Searcher` once."""
    return Searcher(index, data, w, params.paper_order).search(q, params, trace=trace)
