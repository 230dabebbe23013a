"""Recall, SME and the benchmark harness (recall / QPS sweeps over ``l``).

Every framework answers the same query batch; recall is measured against one
ground truth (by default the exact joint top-k under the fused weights).
Timing covers the query loop only: searchers, indexes and JIT kernels are
warmed before the clock starts, and each cell is the mean of several trials.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mstm.baselines import MergePolicy, MrIndexSet, brute_force_topk, je_search, mr_exact, mr_search
from mstm.core import WeightVector, sme
from mstm.errors import SetupError, UsageError
from mstm.index import FusedIndex
from mstm.io import MultiModalDataset, QueryBatch, write_ivecs
from mstm.search import SearchParams, Searcher

log = logging.getLogger(__name__)

FRAMEWORKS = ("must", "mr", "je", "must-exact", "mr-exact")


def recall_at_k(results, truth, k: int) -> float:
    """``|top-k(results) & truth| / |truth|``."""
    truth = np.asarray(truth).reshape(-1)
    if truth.size == 0:
        raise UsageError("ground-truth entry is empty", module="eval")
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}", module="eval")
    top = np.asarray(results).reshape(-1)[:k]
    return len(set(top.tolist()) & set(truth.tolist())) / truth.size


def mean_recall(results: Sequence, truth: Sequence, k: int) -> float:
    if len(results) != len(truth):
        raise UsageError(f"{len(results)} result lists for {len(truth)} truth entries", module="eval")
    return float(np.mean([recall_at_k(r, t, k) for r, t in zip(results, truth)]))


def mean_sme(results: Sequence, truth: Sequence, data: MultiModalDataset) -> float:
    """Mean of ``1 - <truth top-1, returned top-1>`` over modality 0."""
    target = data.vectors[0]
    errs = []
    for r, t in zip(results, truth):
        r = np.asarray(r).reshape(-1)
        t = np.asarray(t).reshape(-1)
        if r.size == 0 or t.size == 0:
            continue
        # same object: zero by definition, not 1 - |v|^2 rounding noise
        errs.append(0.0 if r[0] == t[0] else sme(target[t[0]], target[r[0]]))
    return float(np.mean(errs)) if errs else 0.0


def compute_ground_truth(data: MultiModalDataset, queries: QueryBatch, w: WeightVector, k: int,
                         path=None) -> list:
    """Exact joint top-``k`` per query; written as ivecs when ``path`` is given."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}", module="eval")
    k = min(k, data.n)
    truth = [brute_force_topk(data, queries.query(j), w, k)[0] for j in range(queries.nq)]
    if path is not None:
        write_ivecs(path, np.array(truth, dtype=np.int32).reshape(len(truth), k))
    return truth


# ---- bench ------------------------------------------------------------------


@dataclass
class Artifacts:
    """Prepared indexes per framework; only the ones a run needs must be set."""

    must: Optional[FusedIndex] = None
    mr: Optional[MrIndexSet] = None
    je: Optional[FusedIndex] = None
    weights: Optional[WeightVector] = None  # fused weights for must-exact; defaults to must's


@dataclass
class BenchRow:
    framework: str
    l: int
    k: int
    recall: float
    sme: float
    qps: float
    visited: float
    pruned: float
    modality_scans: float
    nq: int
    trials: int
    ids: list = field(repr=False, default_factory=list)

    @property
    def ids_digest(self) -> str:
        h = hashlib.sha256()
        for r in self.ids:
            h.update(np.asarray(r, dtype="<i8").tobytes())
            h.update(b"|")
        return h.hexdigest()[:16]


CSV_FIELDS = ["framework", "l", "k", "recall", "sme", "qps", "visited", "pruned",
              "modality_scans", "nq", "trials", "ids_digest"]


@dataclass
class BenchReport:
    rows: list
    meta: dict = field(default_factory=dict)

    def row(self, framework: str, l: int | None = None) -> BenchRow:
        for r in self.rows:
            if r.framework == framework and (l is None or r.l == l):
                return r
        raise KeyError((framework, l))

    def to_csv(self, path=None) -> str:
        buf = _io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_FIELDS)
        for r in self.rows:
            wr.writerow([r.framework, r.l, r.k, f"{r.recall:.6f}", f"{r.sme:.6f}", f"{r.qps:.2f}",
                         f"{r.visited:.2f}", f"{r.pruned:.2f}", f"{r.modality_scans:.2f}",
                         r.nq, r.trials, r.ids_digest])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
            Path(str(path) + ".meta.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")
        return text

    def table(self) -> str:
        head = f"{'framework':<11} {'l':>6} {'recall':>7} {'sme':>7} {'qps':>10} {'visited':>9} {'pruned':>9}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.framework:<11} {r.l:>6} {r.recall:>7.4f} {r.sme:>7.4f} {r.qps:>10.1f} "
                         f"{r.visited:>9.1f} {r.pruned:>9.1f}")
        return "\n".join(lines)


def _need(value, framework: str, what: str):
    if value is None:
        raise SetupError(f"framework '{framework}' needs {what}, which was not provided")
    return value


def _composition(queries: QueryBatch, j: int):
    if queries.composition is not None:
        return queries.composition[j]
    return queries.vectors[0][j] if queries.mask[j, 0] else None


def _timed(run, trials: int):
    """Run ``run()`` ``trials`` times; return the last output and mean seconds."""
    times, out = [], None
    for _ in range(trials):
        t0 = time.perf_counter()
        out = run()
        times.append(time.perf_counter() - t0)
    return out, float(np.mean(times))


def run_bench(data: MultiModalDataset, queries: QueryBatch, truth: Sequence,
              frameworks: Sequence[str], l_sweep: Sequence[int], artifacts: Artifacts,
              k: int = 10, trials: int = 3, rng_seed: int = 0, pruning: bool = True,
              mr_candidates: int = 100) -> BenchReport:
    """Time every framework over the ``l`` sweep; exact frameworks get one row (``l = n``)."""
    for f in frameworks:
        if f not in FRAMEWORKS:
            raise UsageError(f"unknown framework {f!r}; choose from {', '.join(FRAMEWORKS)}", module="eval")
    if len(truth) != queries.nq:
        raise SetupError(f"truth has {len(truth)} entries for {queries.nq} queries")
    if trials < 1:
        raise UsageError("trials must be >= 1", module="eval")
    nq = queries.nq
    rows = []
    fused_w = artifacts.weights or (artifacts.must.weights if artifacts.must is not None else None)

    def add(framework, l, results, secs, stats=None):
        stats = stats or [(0, 0, 0)] * nq
        st = np.asarray(stats, dtype=np.float64).reshape(nq, 3)
        rows.append(BenchRow(
            framework, int(l), k, mean_recall(results, truth, k), mean_sme(results, truth, data),
            nq / max(secs, 1e-12), *st.mean(axis=0).tolist(), nq, trials,
            [np.asarray(r, dtype=np.int64) for r in results],
        ))
        log.info("%s l=%d recall=%.4f qps=%.1f", framework, l, rows[-1].recall, rows[-1].qps)

    for f in frameworks:
        if f == "must":
            s = Searcher(_need(artifacts.must, f, "a fused index"), data, artifacts.weights)
            qs = [queries.query(j) for j in range(nq)]
            s.search(qs[0], SearchParams(k=k, l=min(l_sweep[0], data.n), pruning=pruning))  # warm
            for l in l_sweep:
                p = SearchParams(k=k, l=min(max(l, k), data.n), rng_seed=rng_seed, pruning=pruning)
                outs, secs = _timed(lambda: [s.search(q, p, qid=j) for j, q in enumerate(qs)], trials)
                add(f, p.l, [o.ids for o in outs], secs,
                    [(o.visited, o.pruned, o.modality_scans) for o in outs])
        elif f == "je":
            idx = _need(artifacts.je, f, "a modality-0 index (build --one-hot 0)")
            comps = [_composition(queries, j) for j in range(nq)]
            if any(c is None for c in comps):
                raise SetupError("framework 'je' needs a composition or modality-0 vector for every query")
            s = Searcher(idx, data)
            for l in l_sweep:
                l = min(max(l, k), data.n)
                outs, secs = _timed(lambda: [je_search(idx, data, c, k, l, rng_seed, searcher=s, qid=j)
                                             for j, c in enumerate(comps)], trials)
                add(f, l, [o.ids for o in outs], secs,
                    [(o.visited, o.pruned, o.modality_scans) for o in outs])
        elif f == "mr":
            mr = _need(artifacts.mr, f, "per-modality indexes (build --one-hot i for each i)")
            if mr.m != data.m:
                raise SetupError(f"framework 'mr' has {mr.m} indexes for m={data.m}")
            searchers = [Searcher(ix, data) for ix in mr.indexes]
            for l in l_sweep:
                l = min(max(l, k), data.n)
                policy = MergePolicy(c=max(k, min(mr_candidates, data.n)), k=k)
                run = lambda: [mr_search(mr, data, queries.query(j), policy, l,
                                         queries.composition[j] if queries.composition is not None else None,
                                         rng_seed, searchers) for j in range(nq)]
                outs, secs = _timed(run, trials)
                add(f, l, outs, secs)
        elif f == "must-exact":
            w = _need(fused_w, f, "fused weights (a fused index or a weights file)")
            outs, secs = _timed(lambda: [brute_force_topk(data, queries.query(j), w, k)[0]
                                         for j in range(nq)], trials)
            add(f, data.n, outs, secs)
        elif f == "mr-exact":
            policy = MergePolicy(c=max(k, min(mr_candidates, data.n)), k=k)
            outs, secs = _timed(lambda: [mr_exact(data, queries.query(j), policy,
                                                  queries.composition[j] if queries.composition is not None else None)
                                         for j in range(nq)], trials)
            add(f, data.n, outs, secs)
    meta = {
        "dataset": data.name, "n": data.n, "m": data.m, "nq": nq, "k": k, "trials": trials,
        "rng_seed": rng_seed, "pruning": pruning, "frameworks": list(frameworks),
        "l_sweep": [int(x) for x in l_sweep], "mr_candidates": mr_candidates, "fingerprint": f"{data.fingerprint():016x}",
    }
    return BenchReport(rows, meta)
