"""Comparison systems: exact scans, single-vector joint embedding (JE), and
multi-streamed retrieval (MR) with intersection merging.

MR and JE reuse the fused-index engine with one-hot weights, so every
framework shares one search code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mstm import _kernels as K
from mstm.core import MultiVector, WeightVector, topk_desc
from mstm.errors import UsageError
from mstm.index import BuildParams, FusedIndex, build_fused_index
from mstm.io import MultiModalDataset
from mstm.search import SearchOutcome, SearchParams, Searcher


def _query_layout(data: MultiModalDataset, q: MultiVector, w: WeightVector):
    if q.m != data.m or w.m != data.m:
        raise UsageError(f"schema mismatch: query m={q.m}, weights m={w.m}, dataset m={data.m}",
                         module="baselines")
    offsets = data.offsets
    qvec = np.zeros(offsets[-1], dtype=np.float32)
    for i in range(q.m):
        if q[i] is not None:
            if q[i].size != offsets[i + 1] - offsets[i]:
                raise UsageError(f"query modality {i} has dim {q[i].size}", module="baselines")
            qvec[offsets[i] : offsets[i + 1]] = q[i]
    return qvec, np.ascontiguousarray(w.masked_squared(q.mask))


def scan_all(data: MultiModalDataset, q: MultiVector, w: WeightVector) -> np.ndarray:
    """Joint score of every object, bit-identical to the graph search's scores."""
    qvec, w2 = _query_layout(data, q, w)
    return K.scan_scores(data.concat, qvec, data.offsets, w2)


def brute_force_topk(data: MultiModalDataset, q: MultiVector, w: WeightVector, k: int):
    """Exact top-k by full scan; returns ``(ids, scores)``, ties to lower id."""
    scores = scan_all(data, q, w)
    ids = topk_desc(scores, k)
    return ids, scores[ids]


# ---- JE ---------------------------------------------------------------------


def build_je_index(data: MultiModalDataset, params: BuildParams = BuildParams()) -> FusedIndex:
    return build_fused_index(data, WeightVector.one_hot(data.m, 0), params)


def je_search(target_index: FusedIndex, data: MultiModalDataset, composition_query,
              k: int, l: int | None = None, rng_seed: int = 0, pruning: bool = False,
              searcher: Searcher | None = None, qid: int = 0) -> SearchOutcome:
    """Single-vector search with a modality-0-space query vector."""
    w = target_index.weights
    if np.count_nonzero(w.omega) != 1 or w.omega[0] == 0:
        raise UsageError("JE needs an index built on modality 0 alone", module="baselines")
    q0 = np.asarray(composition_query, dtype=np.float32).reshape(-1)
    if q0.size != data.dims[0]:
        raise UsageError(f"composition query has dim {q0.size}, modality 0 has {data.dims[0]}",
                         module="baselines")
    q = MultiVector((q0,) + (None,) * (data.m - 1))
    params = SearchParams(k=k, l=l if l is not None else max(k, 20 * k), rng_seed=rng_seed,
                          pruning=pruning)
    return (searcher or Searcher(target_index, data)).search(q, params, qid=qid)


# ---- MR ---------------------------------------------------------------------


@dataclass
class MergePolicy:
    c: int = 100
    k: int = 10

    def __post_init__(self):
        if self.c < self.k:
            raise UsageError(f"candidate count c={self.c} must be >= k={self.k}", module="baselines")


@dataclass
class MrIndexSet:
    indexes: list

    @classmethod
    def build(cls, data: MultiModalDataset, params: BuildParams = BuildParams()) -> "MrIndexSet":
        return cls([build_fused_index(data, WeightVector.one_hot(data.m, i), params)
                    for i in range(data.m)])

    @property
    def m(self) -> int:
        return len(self.indexes)


def merge_streams(streams: list, k: int) -> np.ndarray:
    """Intersect per-stream ranked candidate lists; order by rank sum.

    Intersection members come first by ascending rank sum; if fewer than
    ``k`` survive, the rest of the union pads by ascending rank sum, an absent
    candidate counting as rank ``len(stream)``. Ties go to the lower id.
    """
    if not streams:
        return np.empty(0, dtype=np.int64)
    ranks = [{int(o): r for r, o in enumerate(s)} for s in streams]
    union = sorted(set().union(*[set(r) for r in ranks]))
    inter = set(ranks[0]).intersection(*ranks[1:])

    def rank_sum(o):
        return sum(r.get(o, len(s)) for r, s in zip(ranks, streams))

    first = sorted(inter, key=lambda o: (rank_sum(o), o))
    rest = sorted((o for o in union if o not in inter), key=lambda o: (rank_sum(o), o))
    return np.array((first + rest)[:k], dtype=np.int64)


def _stream_queries(q: MultiVector, composition=None):
    out = []
    for i in range(q.m):
        vec = q[i]
        if i == 0 and composition is not None:
            vec = np.asarray(composition, dtype=np.float32)
        if vec is None:
            continue
        slots = [None] * q.m
        slots[i] = vec
        out.append((i, MultiVector(tuple(slots))))
    return out


def mr_search(indexes: MrIndexSet, data: MultiModalDataset, q: MultiVector, policy: MergePolicy,
              l: int | None = None, composition=None, rng_seed: int = 0,
              searchers: list | None = None) -> np.ndarray:
    """One search per present query modality, then :func:`merge_streams`."""
    c = min(policy.c, data.n)
    k = min(policy.k, c)
    pool = max(c, l or c)
    params = SearchParams(k=c, l=min(pool, data.n), rng_seed=rng_seed, pruning=False)
    streams = []
    for i, qi in _stream_queries(q, composition):
        s = searchers[i] if searchers is not None else Searcher(indexes.indexes[i], data)
        streams.append(s.search(qi, params).ids)
    return merge_streams(streams, k)


def mr_exact(data: MultiModalDataset, q: MultiVector, policy: MergePolicy,
             composition=None) -> np.ndarray:
    c = min(policy.c, data.n)
    streams = []
    for i, qi in _stream_queries(q, composition):
        ids, _ = brute_force_topk(data, qi, WeightVector.one_hot(data.m, i), c)
        streams.append(ids)
    return merge_streams(streams, min(policy.k, c))
