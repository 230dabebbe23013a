"""Compiled inner loops for graph construction and search.

Data layout shared by every kernel:

* ``X``: ``(n, D)`` float32, the raw per-modality unit vectors laid side by
  side (unweighted); modality ``i`` occupies ``X[:, offsets[i]:offsets[i+1]]``.
* ``w2``: ``(m,)`` float64 squared weights, zero for absent modalities.

The joint score is always summed modality by modality in index order so that
every path (brute force, graph search, pruned search) yields bit-identical
float64 values for the same pair.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_JIT = dict(cache=True, nogil=True)

# the bound and the exact score round differently; never prune on a few-ulp margin
PRUNE_SLACK = 1e-12


@nb.njit(**_JIT)
def modality_ip(X, a, q, lo, hi):
    s = 0.0
    for j in range(lo, hi):
        s += np.float64(X[a, j]) * np.float64(q[j])
    return s


@nb.njit(**_JIT)
def pair_ip(X, a, b, offsets, w2):
    s = 0.0
    for i in range(w2.size):
        if w2[i] == 0.0:
            continue
        t = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            t += np.float64(X[a, j]) * np.float64(X[b, j])
        s += w2[i] * t
    return s


@nb.njit(**_JIT)
def query_ip(X, u, q, offsets, w2):
    s = 0.0
    for i in range(w2.size):
        if w2[i] == 0.0:
            continue
        s += w2[i] * modality_ip(X, u, q, offsets[i], offsets[i + 1])
    return s


@nb.njit(**_JIT)
def scan_scores(X, q, offsets, w2):
    n = X.shape[0]
    out = np.empty(n, dtype=np.float64)
    for u in range(n):
        out[u] = query_ip(X, u, q, offsets, w2)
    return out


@nb.njit(**_JIT)
def _worst_slot(scores, ids):
    # lowest score; among equal scores the higher id is the worse one
    z = 0
    for j in range(1, scores.size):
        if scores[j] < scores[z] or (scores[j] == scores[z] and ids[j] > ids[z]):
            z = j
    return z


@nb.njit(**_JIT)
def nndescent(X, offsets, w2, nbrs, eps, history):
    """Forward replace-worst sweeps, in place on ``nbrs`` (n, gamma).

    ``history[s, o]`` receives the minimum neighbour score of ``o`` after
    sweep ``s`` (row 0 is the random initialisation).
    """
    n, g = nbrs.shape
    sc = np.empty((n, g), dtype=np.float64)
    for o in range(n):
        for j in range(g):
            sc[o, j] = pair_ip(X, o, nbrs[o, j], offsets, w2)
        history[0, o] = sc[o].min()
    snapshot = np.empty(g, dtype=nbrs.dtype)
    for it in range(eps):
        for o in range(n):
            snapshot[:] = nbrs[o]
            for a in range(g):
                v = snapshot[a]
                for b in range(g):
                    u = nbrs[v, b]
                    if u == o:
                        continue
                    present = False
                    for j in range(g):
                        if nbrs[o, j] == u:
                            present = True
                            break
                    if present:
                        continue
                    z = _worst_slot(sc[o], nbrs[o])
                    s = pair_ip(X, o, u, offsets, w2)
                    if s > sc[o, z]:
                        nbrs[o, z] = u
                        sc[o, z] = s
            history[it + 1, o] = sc[o].min()


@nb.njit(**_JIT)
def candidates_of(nbrs, deg, o):
    n = nbrs.shape[0]
    total = deg[o]
    for a in range(deg[o]):
        total += deg[nbrs[o, a]]
    buf = np.empty(total, dtype=np.int64)
    c = 0
    for a in range(deg[o]):
        v = nbrs[o, a]
        buf[c] = v
        c += 1
        for b in range(deg[v]):
            buf[c] = nbrs[v, b]
            c += 1
    buf = np.unique(buf)
    keep = 0
    for j in range(buf.size):
        if buf[j] != o and 0 <= buf[j] < n:
            buf[keep] = buf[j]
            keep += 1
    return buf[:keep]


@nb.njit(**_JIT)
def mrng_select(X, offsets, w2, o, cands, gamma, out):
    """Write the selected neighbours of ``o`` into ``out``; return the count.

    ``cands`` must be sorted by id so the stable sort breaks score ties by id.
    """
    nc = cands.size
    if nc == 0:
        return 0
    s = np.empty(nc, dtype=np.float64)
    for j in range(nc):
        s[j] = pair_ip(X, o, cands[j], offsets, w2)
    order = np.argsort(-s, kind="mergesort")
    cnt = 0
    for r in range(nc):
        if cnt >= gamma:
            break
        v = cands[order[r]]
        sv = s[order[r]]
        ok = True
        for j in range(cnt):
            if not sv > pair_ip(X, out[j], v, offsets, w2):
                ok = False
                break
        if ok:
            out[cnt] = v
            cnt += 1
    return cnt


@nb.njit(parallel=True, cache=True)
def mrng_all(X, offsets, w2, nbrs, deg, gamma):
    n = nbrs.shape[0]
    adj = np.full((n, gamma), -1, dtype=np.int32)
    out_deg = np.zeros(n, dtype=np.int32)
    for o in nb.prange(n):
        cands = candidates_of(nbrs, deg, o)
        row = np.empty(gamma, dtype=np.int64)
        cnt = mrng_select(X, offsets, w2, o, cands, gamma, row)
        for j in range(cnt):
            adj[o, j] = row[j]
        out_deg[o] = cnt
    return adj, out_deg


@nb.njit(**_JIT)
def _insert(ids, sc, vis, count, cap, u, s):
    """Insert ``(u, s)`` into the descending pool; return (position, evicted)."""
    evicted = -1
    if count == cap:
        evicted = ids[cap - 1]
        count -= 1
    pos = count
    while pos > 0 and (sc[pos - 1] < s or (sc[pos - 1] == s and ids[pos - 1] > u)):
        ids[pos] = ids[pos - 1]
        sc[pos] = sc[pos - 1]
        vis[pos] = vis[pos - 1]
        pos -= 1
    ids[pos] = u
    sc[pos] = s
    vis[pos] = False
    return pos, evicted


@nb.njit(**_JIT)
def greedy_search(X, offsets, w2, order, q, indptr, indices, init, l, prune, trace, stats):
    """Joint greedy search over a CSR graph.

    ``init``: starting vertices (seed first). ``order``: modality scan order
    used only when pruning. ``stats`` receives
    [visited, evaluations, pruned, modality_scans, trace_len].
    Returns (ids, scores, trace) with the pool sorted by descending score.
    """
    n = X.shape[0]
    m = w2.size
    cap = l
    ids = np.empty(cap, dtype=np.int64)
    sc = np.empty(cap, dtype=np.float64)
    vis = np.zeros(cap, dtype=np.bool_)
    in_pool = np.zeros(n, dtype=np.bool_)
    visited = np.zeros(n, dtype=np.bool_)

    present = 0
    cnorm = 0.0
    for i in range(m):
        if w2[i] > 0.0:
            present += 1
            cnorm += w2[i]

    evals = 0
    pruned = 0
    scans = 0
    count = 0
    for t in range(init.size):
        u = init[t]
        if in_pool[u]:
            continue
        s = query_ip(X, u, q, offsets, w2)
        evals += 1
        scans += present
        pos, ev = _insert(ids, sc, vis, count, cap, u, s)
        if ev < 0:
            count += 1
        else:
            in_pool[ev] = False
        in_pool[u] = True

    tr = np.empty(n + 1 if trace else 0, dtype=np.float64)
    ntr = 0
    if trace:
        acc = 0.0
        for j in range(count):
            acc += sc[j]
        tr[0] = acc
        ntr = 1

    ip_buf = np.zeros(m, dtype=np.float64)
    nvisit = 0
    cur = 0
    while True:
        while cur < count and vis[cur]:
            cur += 1
        if cur >= count:
            break
        v = ids[cur]
        vis[cur] = True
        visited[v] = True
        nvisit += 1
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if visited[u] or in_pool[u]:
                continue
            full = count == cap
            threshold = sc[cap - 1] if full else -np.inf
            evals += 1
            if prune and full:
                bound = cnorm
                x = 0
                cut = False
                for r in range(m):
                    i = order[r]
                    if w2[i] == 0.0:
                        continue
                    ip_buf[i] = modality_ip(X, u, q, offsets[i], offsets[i + 1])
                    scans += 1
                    x += 1
                    bound -= w2[i] * (1.0 - ip_buf[i])
                    if x < present and threshold >= bound + PRUNE_SLACK:
                        cut = True
                        break
                if cut:
                    pruned += 1
                    continue
                s = 0.0
                for i in range(m):
                    if w2[i] > 0.0:
                        s += w2[i] * ip_buf[i]
            else:
                s = query_ip(X, u, q, offsets, w2)
                scans += present
            if full and not s > threshold:
                continue
            pos, ev = _insert(ids, sc, vis, count, cap, u, s)
            if ev < 0:
                count += 1
            else:
                in_pool[ev] = False
            in_pool[u] = True
            # slots before min(cur, pos) are all visited
            if pos < cur:
                cur = pos
        if trace:
            acc = 0.0
            for j in range(count):
                acc += sc[j]
            tr[ntr] = acc
            ntr += 1

    stats[0] = nvisit
    stats[1] = evals
    stats[2] = pruned
    stats[3] = scans
    stats[4] = ntr
    return ids[:count].copy(), sc[:count].copy(), tr[:ntr].copy()
