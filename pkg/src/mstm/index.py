"""Fused proximity-graph index over the weighted concatenated space.

Construction runs five stages in order:

1. random neighbour lists refined by forward NN-Descent sweeps,
2. candidate acquisition (neighbours plus neighbours of neighbours),
3. MRNG neighbour selection from the candidates,
4. seed selection (vertex closest to the centroid),
5. connectivity repair by BFS from the seed.

The graph is directed; ties are broken towards lower object ids throughout.
"""

from __future__ import annotations

import logging
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from mstm import _kernels as K
from mstm.core import WeightVector
from mstm.errors import BuildError, FormatError, LoadError
from mstm.io import MultiModalDataset

log = logging.getLogger(__name__)

MAGIC = b"MSTM"
VERSION = 1
FLAG_REPAIR = 1


@dataclass(frozen=True)
class BuildParams:
    gamma: int = 30
    eps: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.gamma < 1:
            raise BuildError(f"gamma must be >= 1, got {self.gamma}")
        if self.eps < 1:
            raise BuildError(f"eps must be >= 1, got {self.eps}")


@dataclass
class BuildTrace:
    """Intermediate state kept in memory after a build (never persisted)."""

    initial: np.ndarray  # (n, min(gamma, n-1)) after NN-Descent
    min_ip_history: np.ndarray  # (eps+1, n)


@dataclass
class FusedIndex:
    indptr: np.ndarray
    indices: np.ndarray
    seed: int
    weights: WeightVector
    params: BuildParams
    fingerprint: int
    repair_edges: list = field(default_factory=list)
    trace: Optional[BuildTrace] = None

    @property
    def n(self) -> int:
        return self.indptr.size - 1

    @property
    def m(self) -> int:
        return self.weights.m

    def neighbors(self, o: int) -> np.ndarray:
        return self.indices[self.indptr[o] : self.indptr[o + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def adjacency(self) -> list:
        return [self.neighbors(o).tolist() for o in range(self.n)]

    @classmethod
    def from_lists(cls, lists, seed, weights, params, fingerprint, repair_edges=(), trace=None):
        indptr = np.zeros(len(lists) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(a) for a in lists])
        flat = [x for a in lists for x in a]
        indices = np.asarray(flat, dtype=np.int64) if flat else np.empty(0, dtype=np.int64)
        return cls(indptr, indices, int(seed), weights, params, int(fingerprint),
                   list(repair_edges), trace)

    # ---- persistence -----------------------------------------------------

    def to_bytes(self) -> bytes:
        flags = FLAG_REPAIR if self.repair_edges else 0
        parts = [
            MAGIC,
            struct.pack("<6I", VERSION, self.n, self.m, self.params.gamma, flags, self.params.eps),
            struct.pack("<Q", self.params.rng_seed & 0xFFFFFFFFFFFFFFFF),
            np.asarray(self.weights.omega, dtype="<f4").tobytes(),
            struct.pack("<I", self.seed),
        ]
        deg = self.degrees()
        for o in range(self.n):
            parts.append(struct.pack("<I", int(deg[o])))
            parts.append(self.neighbors(o).astype("<u4").tobytes())
        if flags & FLAG_REPAIR:
            parts.append(struct.pack("<I", len(self.repair_edges)))
            parts.append(np.asarray(self.repair_edges, dtype="<u4").reshape(-1).tobytes())
        parts.append(struct.pack("<Q", self.fingerprint))
        return b"".join(parts)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "FusedIndex":
        if raw[:4] != MAGIC:
            raise FormatError("not an index file (bad magic)", module="index")
        pos = 4
        try:
            version, n, m, gamma, flags, eps = struct.unpack_from("<6I", raw, pos)
            pos += 24
            if version != VERSION:
                raise FormatError(f"unsupported index version {version}", module="index")
            (rng_seed,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            omega = np.frombuffer(raw, dtype="<f4", count=m, offset=pos).astype(np.float64)
            pos += 4 * m
            (seed,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            indptr = np.zeros(n + 1, dtype=np.int64)
            chunks = []
            for o in range(n):
                (c,) = struct.unpack_from("<I", raw, pos)
                pos += 4
                chunks.append(np.frombuffer(raw, dtype="<u4", count=c, offset=pos))
                pos += 4 * c
                indptr[o + 1] = indptr[o] + c
            repair = []
            if flags & FLAG_REPAIR:
                (r,) = struct.unpack_from("<I", raw, pos)
                pos += 4
                pairs = np.frombuffer(raw, dtype="<u4", count=2 * r, offset=pos).reshape(-1, 2)
                repair = [(int(a), int(b)) for a, b in pairs]
                pos += 8 * r
            (fp,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
        except (struct.error, ValueError) as exc:
            raise FormatError(f"truncated index file at byte offset {pos}: {exc}", module="index") from None
        if pos != len(raw):
            raise FormatError(f"{len(raw) - pos} trailing bytes after index", module="index")
        indices = (np.concatenate(chunks) if chunks else np.empty(0)).astype(np.int64)
        return cls(indptr, indices, int(seed), WeightVector(omega),
                   BuildParams(gamma, eps, int(rng_seed)), int(fp), repair)

    @classmethod
    def load(cls, path, data: MultiModalDataset | None = None) -> "FusedIndex":
        path = Path(path)
        if not path.exists():
            raise LoadError(f"index file not found: {path}", module="index")
        idx = cls.from_bytes(path.read_bytes())
        if data is not None:
            idx.check_dataset(data)
        return idx

    def check_dataset(self, data: MultiModalDataset) -> None:
        if data.n != self.n or data.m != self.m:
            raise LoadError(
                f"index built for n={self.n}, m={self.m}; dataset has n={data.n}, m={data.m}",
                module="index",
            )
        fp = data.fingerprint()
        if fp != self.fingerprint:
            raise LoadError(
                f"dataset fingerprint {fp:016x} does not match index fingerprint {self.fingerprint:016x}",
                module="index",
            )


# ---- stage 1 ----------------------------------------------------------------


def _kernel_inputs(data: MultiModalDataset, w: WeightVector):
    if w.m != data.m:
        raise BuildError(f"weights have m={w.m}, dataset has m={data.m}")
    return data.concat, data.offsets, np.ascontiguousarray(w.squared, dtype=np.float64)


def random_neighbors(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((n, k), dtype=np.int64)
    for o in range(n):
        pick = rng.choice(n - 1, size=k, replace=False)
        pick[pick >= o] += 1
        out[o] = pick
    return out


def init_nndescent(data: MultiModalDataset, w: WeightVector, params: BuildParams,
                   return_history: bool = False):
    """Random initial lists refined by ``params.eps`` forward sweeps.

    Each sweep visits every ``o`` and, for each ``v`` in ``N(o)`` and each
    ``u`` in ``N(v)`` not already listed, replaces the worst member of
    ``N(o)`` with ``u`` when ``u`` scores strictly higher. Reverse neighbours
    are not joined.
    """
    n = data.n
    if n < 2:
        raise BuildError(f"NN-Descent needs n >= 2, got n={n}")
    k = min(params.gamma, n - 1)
    X, offsets, w2 = _kernel_inputs(data, w)
    rng = np.random.default_rng(params.rng_seed)
    nbrs = random_neighbors(n, k, rng)
    history = np.empty((params.eps + 1, n), dtype=np.float64)
    K.nndescent(X, offsets, w2, nbrs, params.eps, history)
    return (nbrs, history) if return_history else nbrs


# ---- stage 2 ----------------------------------------------------------------


def acquire_candidates(adjacency, o: int) -> np.ndarray:
    """``N(o)`` united with every ``N(v)`` for ``v`` in ``N(o)``, minus ``o``."""
    first = set(int(v) for v in adjacency[o])
    cands = set(first)
    for v in first:
        cands.update(int(u) for u in adjacency[v])
    cands.discard(int(o))
    return np.array(sorted(cands), dtype=np.int64)


# ---- stage 3 ----------------------------------------------------------------


def select_neighbors_mrng(o: int, candidates, data: MultiModalDataset, w: WeightVector,
                          gamma: int) -> list:
    """Scan candidates by descending score to ``o``; admit ``v`` only when
    ``IP(o, v) > IP(u, v)`` for every already admitted ``u``."""
    X, offsets, w2 = _kernel_inputs(data, w)
    cands = np.unique(np.asarray(candidates, dtype=np.int64))
    cands = cands[cands != o]
    out = np.empty(max(gamma, 1), dtype=np.int64)
    cnt = K.mrng_select(X, offsets, w2, int(o), cands, gamma, out)
    return out[:cnt].tolist()


# ---- stage 4 ----------------------------------------------------------------


def select_seed(data: MultiModalDataset, w: WeightVector) -> int:
    if data.n == 0:
        raise BuildError("cannot choose a seed from an empty dataset")
    sq = w.squared
    score = np.zeros(data.n)
    for i, v in enumerate(data.vectors):
        v64 = v.astype(np.float64)
        score += sq[i] * (v64 @ v64.mean(axis=0))
    return int(np.argmax(score))


# ---- stage 5 ----------------------------------------------------------------


def _bfs(lists, start, reached: np.ndarray) -> list:
    queue = deque([start])
    reached[start] = True
    found = [start]
    while queue:
        v = queue.popleft()
        for u in lists[v]:
            if not reached[u]:
                reached[u] = True
                found.append(u)
                queue.append(u)
    return found


def ensure_connectivity(adjacency, seed: int, data: MultiModalDataset, w: WeightVector,
                        block: int = 1024):
    """Make every vertex reachable from ``seed``.

    Returns ``(lists, repair_edges)``. Each repair adds ``r -> u`` where
    ``u`` is the unreached vertex with the highest joint score to any reached
    vertex ``r``; such edges may push a degree past gamma.
    """
    lists = [list(map(int, a)) for a in adjacency]
    n = len(lists)
    repairs = []
    if n <= 1:
        return lists, repairs
    reached = np.zeros(n, dtype=bool)
    fresh = _bfs(lists, seed, reached)
    if reached.all():
        return lists, repairs
    wd = data.weighted(w)
    # best[u]: highest score from u to any reached vertex, via[u]: that vertex
    best = np.full(n, -np.inf)
    via = np.full(n, -1, dtype=np.int64)
    while True:
        U = np.flatnonzero(~reached)
        if U.size == 0:
            break
        Nw = np.sort(np.asarray(fresh, dtype=np.int64))
        for s in range(0, U.size, block):
            ub = U[s : s + block]
            S = wd[ub] @ wd[Nw].T
            col = np.argmax(S, axis=1)
            val = S[np.arange(ub.size), col]
            cand = Nw[col]
            better = (val > best[ub]) | ((val == best[ub]) & (cand < via[ub]))
            best[ub[better]] = val[better]
            via[ub[better]] = cand[better]
        u = int(U[np.argmax(best[U])])
        r = int(via[u])
        lists[r].append(u)
        repairs.append((r, u))
        fresh = _bfs(lists, u, reached)
    return lists, repairs


# ---- end to end -------------------------------------------------------------


def build_fused_index(data: MultiModalDataset, w: WeightVector,
                      params: BuildParams = BuildParams()) -> FusedIndex:
    # weights are persisted as float32; build with the same rounding
    w = WeightVector(np.asarray(w.omega, dtype=np.float32).astype(np.float64))
    X, offsets, w2 = _kernel_inputs(data, w)
    n = data.n
    fp = data.fingerprint()
    if n == 1:
        return FusedIndex.from_lists([[]], 0, w, params, fp)
    nbrs, history = init_nndescent(data, w, params, return_history=True)
    log.info("nn-descent done: n=%d gamma=%d eps=%d", n, params.gamma, params.eps)
    deg = np.full(n, nbrs.shape[1], dtype=np.int64)
    adj, out_deg = K.mrng_all(X, offsets, w2, nbrs, deg, params.gamma)
    lists = [adj[o, : out_deg[o]].tolist() for o in range(n)]
    seed = select_seed(data, w)
    lists, repairs = ensure_connectivity(lists, seed, data, w)
    if repairs:
        log.info("connectivity repair added %d edges", len(repairs))
    return FusedIndex.from_lists(lists, seed, w, params, fp, repairs, BuildTrace(nbrs, history))


def graph_quality(adjacency, data: MultiModalDataset, w: WeightVector, gamma: int,
                  block: int = 512) -> float:
    """Mean fraction of each vertex's exact top-gamma found in its list."""
    if isinstance(adjacency, FusedIndex):
        adjacency = adjacency.adjacency()
    n = data.n
    k = min(gamma, n - 1)
    if k <= 0:
        return 1.0
    wd = data.weighted(w)
    total = 0.0
    for s in range(0, n, block):
        rows = np.arange(s, min(s + block, n))
        S = wd[rows] @ wd.T
        S[np.arange(rows.size), rows] = -np.inf
        top = np.argpartition(-S, k - 1, axis=1)[:, :k]
        for r, o in enumerate(rows):
            stored = set(int(x) for x in adjacency[o])
            total += len(stored.intersection(top[r].tolist())) / k
    return total / n
