"""Acceptance checks, one test per criterion. Each records a PASS/FAIL line
(printed in the terminal summary) before asserting."""

import time

import numpy as np
import pytest

import fig3
from conftest import ACCEPTANCE
from mstm.baselines import MergePolicy, MrIndexSet, brute_force_topk, build_je_index, je_search, mr_search
from mstm.core import MultiVector, WeightVector, joint_similarity
from mstm.evaluation import Artifacts, run_bench
from mstm.index import BuildParams, build_fused_index, graph_quality, init_nndescent
from mstm.io import SyntheticSpec, generate_synthetic, read_fvecs, read_ivecs, write_fvecs, write_ivecs
from mstm.search import SearchParams, Searcher
from mstm.weights import ModalityScores, TrainConfig, contrastive_loss, loss_gradient, mine_all, train_weights


def record(num, ok, detail):
    ACCEPTANCE[num] = (bool(ok), detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _recall(ids, truth):
    return len(set(ids.tolist()) & set(truth.tolist())) / len(truth)


# 1 -----------------------------------------------------------------------------


def test_criterion_01_joint_similarity_equals_concatenation():
    rng = np.random.default_rng(2024)
    triples = []
    for _ in range(1000):
        m = int(rng.integers(1, 5))
        dims = rng.integers(1, 65, size=m)
        a = [rng.standard_normal(d) for d in dims]
        b = [rng.standard_normal(d) for d in dims]
        a = [(x / np.linalg.norm(x)).astype(np.float32) for x in a]
        b = [(x / np.linalg.norm(x)).astype(np.float32) for x in b]
        triples.append((a, b, rng.random(m) * 2))
    t0 = time.perf_counter()
    worst = 0.0
    for a, b, omega in triples:
        got = joint_similarity(MultiVector(tuple(a)), MultiVector(tuple(b)), WeightVector(omega))
        ca = np.concatenate([w * x.astype(np.float64) for w, x in zip(omega, a)])
        cb = np.concatenate([w * x.astype(np.float64) for w, x in zip(omega, b)])
        worst = max(worst, abs(got - float(ca @ cb)))
    secs = time.perf_counter() - t0
    record(1, worst <= 1e-5 and secs < 1.0, f"max |diff| {worst:.2e} over 1000 triples, {secs:.2f}s")


# 2 -----------------------------------------------------------------------------


def test_criterion_02_mrng_replay_and_angles(big, big_index):
    t0 = time.perf_counter()
    idx = big_index
    wd = big.dataset.weighted(idx.weights)
    c = float(idx.weights.squared.sum())
    repaired = {}
    for r, u in idx.repair_edges:
        repaired.setdefault(r, set()).add(u)
    admissions = violations = pairs = 0
    min_angle = np.pi
    for o in range(idx.n):
        nb = [v for v in idx.neighbors(o).tolist() if v not in repaired.get(o, ())]
        if not nb:
            continue
        W = wd[nb]
        s = W @ wd[o]
        G = W @ W.T
        admissions += len(nb)
        for p in range(1, len(nb)):
            if not (np.all(s[p] > G[:p, p]) and np.all(s[:p] >= s[p])):
                violations += 1
        D = W - wd[o]
        norms = np.linalg.norm(D, axis=1)
        cos = (D @ D.T) / np.outer(norms, norms)
        iu = np.triu_indices(len(nb), 1)
        if iu[0].size:
            pairs += iu[0].size
            min_angle = min(min_angle, float(np.arccos(np.clip(cos[iu], -1, 1)).min()))
    secs = time.perf_counter() - t0 + idx.build_seconds
    ok = violations == 0 and abs(c - 1.0) < 1e-6 and min_angle >= np.pi / 3 - 1e-3 and secs < 120
    record(2, ok, f"{admissions} admissions, {violations} violations; C={c:.6f}, "
                  f"min angle {np.degrees(min_angle):.2f} deg over {pairs} pairs; build+replay {secs:.1f}s")


# 3 -----------------------------------------------------------------------------


def test_criterion_03_pool_sum_monotone(big, big_index):
    s = Searcher(big_index, big.dataset)
    t0 = time.perf_counter()
    bad = steps = 0
    for j in range(100):
        out = s.search(big.queries.query(j), SearchParams(k=10, l=200), qid=j, trace=True)
        steps += out.trace.size - 1
        bad += int(np.any(np.diff(out.trace) < 0))
    secs = time.perf_counter() - t0
    record(3, bad == 0 and secs < 10, f"{bad}/100 searches with a decrease over {steps} iterations, {secs:.2f}s")


# 4 -----------------------------------------------------------------------------


def test_criterion_04_pruning_exact_and_saves_scans(big, big_index):
    s = Searcher(big_index, big.dataset)
    qs = [big.queries.query(j) for j in range(big.queries.nq)]
    t0 = time.perf_counter()
    chosen = None
    for l in (40, 60, 80, 100, 150, 200):
        on = [s.search(q, SearchParams(k=10, l=l, pruning=True), qid=j) for j, q in enumerate(qs)]
        rec = np.mean([_recall(o.ids, big.truth[j]) for j, o in enumerate(on)])
        if rec >= 0.95:
            chosen = l
            break
    off = [s.search(q, SearchParams(k=10, l=chosen, pruning=False), qid=j) for j, q in enumerate(qs)]
    secs = time.perf_counter() - t0
    same = all(a.ids.tolist() == b.ids.tolist() and np.array_equal(a.scores, b.scores) for a, b in zip(on, off))
    pruned = sum(o.pruned for o in on)
    scans_on = sum(o.modality_scans for o in on)
    scans_off = sum(o.modality_scans for o in off)
    cut = 1 - scans_on / scans_off
    ok = same and pruned > 0 and cut >= 0.10 and secs < 60
    record(4, ok, f"l={chosen}: recall {rec:.3f}, identical={same}, pruned evals {pruned}, "
                  f"modality scans cut {100 * cut:.1f}%, {secs:.1f}s")


# 5 -----------------------------------------------------------------------------


def test_criterion_05_graph_quality(big, big_index):
    t0 = time.perf_counter()
    w = big_index.weights
    q3 = graph_quality(big_index.trace.initial, big.dataset, w, 30)
    nb1 = init_nndescent(big.dataset, w, BuildParams(gamma=30, eps=1))
    q1 = graph_quality(nb1, big.dataset, w, 30)
    secs = time.perf_counter() - t0 + big_index.build_seconds
    record(5, q3 >= 0.90 and q1 < q3 and secs < 120,
           f"quality eps=3 {q3:.4f}, eps=1 {q1:.4f}, {secs:.1f}s")


# 6 -----------------------------------------------------------------------------


def test_criterion_06_search_vs_oracle(big, big_index):
    s = Searcher(big_index, big.dataset)
    t0 = time.perf_counter()
    rec, vis = [], []
    for j in range(big.queries.nq):
        o = s.search(big.queries.query(j), SearchParams(k=10, l=4000), qid=j)
        rec.append(_recall(o.ids, big.truth[j]))
        vis.append(o.visited / big.dataset.n)
    secs = time.perf_counter() - t0
    r, v = float(np.mean(rec)), float(np.mean(vis))
    record(6, r >= 0.95 and v <= 0.5 and secs < 60,
           f"l=4000 over {big.queries.nq} queries: recall@10(10) {r:.4f}, visited {100 * v:.1f}%, {secs:.1f}s")


# 7 -----------------------------------------------------------------------------

SIGNAL_NOISE = SyntheticSpec(n=1000, dims=(32, 8), clusters=20, noise_scale=0.8, noise_modalities=(1,),
                             nq=300, truth_k=1, query_noise=0.5, seed=1)


def test_criterion_07_weight_learning():
    t0 = time.perf_counter()
    d = generate_synthetic(SIGNAL_NOISE)
    sc = ModalityScores(d.queries, d.dataset)
    pos = d.query_targets
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        w = WeightVector(rng.random(2) + 0.05)
        rows = rng.choice(d.queries.nq, size=64, replace=False)
        neg = mine_all(sc, pos, w, 10)
        g = loss_gradient(sc, rows, pos, neg, w)
        fd = np.empty(2)
        h = 1e-6
        for i in range(2):
            up, dn = w.omega.copy(), w.omega.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (contrastive_loss(sc, rows, pos, neg, WeightVector(up))
                     - contrastive_loss(sc, rows, pos, neg, WeightVector(dn))) / (2 * h)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-12))))
    hard = train_weights(d.queries, pos, d.dataset, TrainConfig(rng_seed=1, mining="hard"), scores=sc)
    rand = train_weights(d.queries, pos, d.dataset, TrainConfig(rng_seed=1, mining="random"), scores=sc)
    sq = hard.weights.squared
    ratio = float(sq[0] / sq.sum())
    secs = time.perf_counter() - t0
    ok = worst <= 1e-4 and ratio > 0.9 and hard.loss[-1] < rand.loss[-1] and secs < 120
    record(7, ok, f"(a) max rel grad err {worst:.1e}; (b) signal share {ratio:.3f}; "
                  f"(c) final loss hard {hard.loss[-1]:.4f} vs random {rand.loss[-1]:.4f}; {secs:.1f}s")


# 8 -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained_two_signal():
    spec = SyntheticSpec(n=400, dims=(32, 32), clusters=10, noise_scale=1.0, nq=150, truth_k=1,
                         query_noise=0.6, seed=0)
    d = generate_synthetic(spec)
    return train_weights(d.queries, d.query_targets, d.dataset, TrainConfig(rng_seed=0)).weights


def test_criterion_08_baseline_separation(trained_two_signal):
    data, queries = fig3.build()
    w = trained_two_signal
    a = 0
    t0 = time.perf_counter()
    params = BuildParams(gamma=8)
    mr = MrIndexSet.build(data, params)
    je = build_je_index(data, params)
    must = build_fused_index(data, w, params)
    q_raw = queries.query(0)
    phi = queries.composition[0]
    policy = MergePolicy(c=3, k=1)
    mr_raw = mr_search(mr, data, q_raw, policy, l=data.n)[0]
    mr_phi = mr_search(mr, data, q_raw, policy, l=data.n, composition=phi)[0]
    je_top = je_search(je, data, phi, k=1, l=data.n).ids[0]
    fused = Searcher(must, data).search(queries.query(0, use_composition=True), SearchParams(k=1, l=data.n)).ids[0]
    secs = time.perf_counter() - t0
    r = float(w.squared[1] / w.squared[0])
    names = fig3.NAMES + "".join("." for _ in range(fig3.N_FILLER))
    ok = mr_raw != a and mr_phi != a and je_top != a and fused == a and secs < 1.0
    record(8, ok, f"MR(q0)={names[mr_raw]}, MR(phi)={names[mr_phi]}, JE={names[je_top]}, "
                  f"fused={names[fused]} (trained w1^2/w0^2={r:.3f}); {secs:.2f}s")


# 9 -----------------------------------------------------------------------------


def test_criterion_09_exhaustive_identity():
    t0 = time.perf_counter()
    d = generate_synthetic(SyntheticSpec(n=2000, dims=(32, 16), clusters=20, noise_scale=1.0, nq=100,
                                         truth_k=10, reference_weights=(0.6, 0.4), seed=9))
    idx = build_fused_index(d.dataset, d.reference)
    s = Searcher(idx, d.dataset)
    mism = 0
    for j in range(100):
        q = d.queries.query(j)
        o = s.search(q, SearchParams(k=10, l=2000), qid=j)
        ids, scores = brute_force_topk(d.dataset, q, idx.weights, 10)
        mism += int(o.ids.tolist() != ids.tolist() or not np.array_equal(o.scores, scores))
    secs = time.perf_counter() - t0
    record(9, mism == 0 and secs < 30, f"{mism}/100 queries differ at l=n=2000; {secs:.1f}s")


# 10 ----------------------------------------------------------------------------


def test_criterion_10_format_fidelity(tmp_path):
    t0 = time.perf_counter()
    write_fvecs(tmp_path / "doc.fvecs", np.array([[1.0, 2.0]], dtype=np.float32))
    doc = (tmp_path / "doc.fvecs").read_bytes() == bytes.fromhex("020000000000803f00000040")
    rng = np.random.default_rng(0)
    x = rng.standard_normal((257, 33)).astype(np.float32)
    y = rng.integers(-2**31, 2**31 - 1, size=(129, 17), dtype=np.int64).astype(np.int32)
    write_fvecs(tmp_path / "x.fvecs", x)
    write_ivecs(tmp_path / "y.ivecs", y)
    rx, ry = read_fvecs(tmp_path / "x.fvecs"), read_ivecs(tmp_path / "y.ivecs")
    write_fvecs(tmp_path / "x2.fvecs", rx)
    write_ivecs(tmp_path / "y2.ivecs", ry)
    same = ((tmp_path / "x.fvecs").read_bytes() == (tmp_path / "x2.fvecs").read_bytes()
            and (tmp_path / "y.ivecs").read_bytes() == (tmp_path / "y2.ivecs").read_bytes()
            and np.array_equal(rx, x) and np.array_equal(ry, y))
    secs = time.perf_counter() - t0
    record(10, doc and same and secs < 1.0, f"12-byte example match={doc}, round-trip identical={same}, {secs:.3f}s")


# 11 ----------------------------------------------------------------------------


def test_criterion_11_determinism(tmp_path):
    spec = SyntheticSpec(n=3000, dims=(24, 12), clusters=15, noise_scale=1.0, nq=40, truth_k=10,
                         reference_weights=(0.7, 0.3), seed=11)
    runs = []
    for tag in ("a", "b"):
        d = generate_synthetic(spec)
        params = BuildParams(gamma=20, eps=3, rng_seed=5)
        idx = build_fused_index(d.dataset, d.reference, params)
        idx.save(tmp_path / f"{tag}.idx")
        art = Artifacts(must=idx, mr=MrIndexSet.build(d.dataset, params), je=build_je_index(d.dataset, params))
        rep = run_bench(d.dataset, d.queries, d.truth, ["must", "mr", "je", "must-exact", "mr-exact"],
                        [20, 100], art, k=10, trials=1, rng_seed=3)
        runs.append([(r.framework, r.l, [x.tolist() for x in r.ids]) for r in rep.rows])
    same_index = (tmp_path / "a.idx").read_bytes() == (tmp_path / "b.idx").read_bytes()
    same_ids = runs[0] == runs[1]
    record(11, same_index and same_ids,
           f"index bytes identical={same_index}, bench ids identical={same_ids} over {len(runs[0])} rows")
