"""Command line: gen -> gt -> train-weights -> build -> search -> bench.

Weights are exchanged as squared values ``w_i**2``, either as a JSON file
(``{"0": 0.9, "1": 0.1}``) or inline with ``--weights-sq 0.9,0.1``.
The log level comes from ``MSTM_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from mstm.core import WeightVector
from mstm.errors import LoadError, MSTMError, UsageError

log = logging.getLogger("mstm.cli")

LOG_ENV = "MSTM_LOG_LEVEL"


def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def _weights(args, required: bool = True):
    from mstm.io import read_weights

    if getattr(args, "weights_sq", None) is not None:
        return WeightVector.from_squared(args.weights_sq)
    if getattr(args, "weights", None) is not None:
        return read_weights(args.weights)
    if required:
        raise UsageError("weights needed: pass --weights FILE or --weights-sq a,b,...", module="cli")
    return None


def _add_weights(p, help_suffix=""):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--weights", type=Path, help="JSON file of squared weights" + help_suffix)
    g.add_argument("--weights-sq", type=_floats, metavar="W0,W1,..",
                   help="inline squared weights" + help_suffix)
    return g


def _load(manifest):
    from mstm.io import load_dataset, read_manifest

    man = read_manifest(manifest)
    return man, load_dataset(man)


def _truth(args, man):
    from mstm.io import load_truth

    path = args.truth or man.truth_path
    if path is None:
        return None
    if not Path(path).exists():
        raise LoadError(f"truth file not found: {path}")
    return load_truth(path)


# ---- subcommands ------------------------------------------------------------


def cmd_gen(args) -> int:
    from dataclasses import replace

    from mstm.io import SyntheticSpec, generate_synthetic, write_synthetic

    spec = SyntheticSpec.from_file(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    data = generate_synthetic(spec)
    path = write_synthetic(data, args.out, args.name)
    print(f"wrote {path} (n={data.dataset.n}, m={data.dataset.m}, queries={data.queries.nq})")
    return 0


def cmd_gt(args) -> int:
    from mstm.evaluation import compute_ground_truth
    from mstm.io import load_queries

    man, data = _load(args.manifest)
    w = _weights(args)
    if w.m != data.m:
        raise UsageError(f"weights have m={w.m}, dataset has m={data.m}", module="cli")
    queries = load_queries(man, data.dims)
    compute_ground_truth(data, queries, w, args.k, args.out)
    print(f"wrote {args.out} ({queries.nq} queries, k={min(args.k, data.n)})")
    return 0


def cmd_train(args) -> int:
    from mstm.io import load_queries, read_ivecs, write_weights
    from mstm.weights import TrainConfig, train_weights

    man, data = _load(args.manifest)
    queries = load_queries(man, data.dims)
    if args.use_composition:
        queries = queries.with_composition()
    pos = read_ivecs(args.positives)
    if pos.ndim != 2 or pos.shape[0] != queries.nq or pos.shape[1] < 1:
        raise LoadError(f"{args.positives}: expected one positive id per query ({queries.nq} rows)")
    cfg = TrainConfig(
        learning_rate=args.lr, iterations=args.iterations, negatives=args.negatives,
        minibatch=args.minibatch, remine_every=args.remine_every, rng_seed=_seed(args),
        mining=args.mining, optimizer=args.optimizer,
    )
    rep = train_weights(queries, pos[:, 0], data, cfg)
    write_weights(args.out, rep.weights)
    if args.loss_csv:
        with open(args.loss_csv, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["step", "loss", "recall_at_1"])
            for s, (lo, rc) in enumerate(zip(rep.loss, rep.recall), start=1):
                wr.writerow([s, f"{lo:.6f}", f"{rc:.6f}"])
    sq = ", ".join(f"{x:.4f}" for x in rep.weights.squared)
    print(f"weights^2 = [{sq}]  final loss {rep.loss[-1]:.4f}  recall@1 {rep.recall[-1]:.4f}")
    return 0


def cmd_build(args) -> int:
    from mstm.index import BuildParams, build_fused_index

    if args.threads is not None:
        import numba

        if args.threads < 1:
            raise UsageError(f"--threads must be >= 1, got {args.threads}", module="cli")
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    _, data = _load(args.manifest)
    if args.one_hot is not None:
        if not 0 <= args.one_hot < data.m:
            raise UsageError(f"--one-hot {args.one_hot} out of range for m={data.m}", module="cli")
        w = WeightVector.one_hot(data.m, args.one_hot)
    else:
        w = _weights(args)
    if w.m != data.m:
        raise UsageError(f"weights have m={w.m}, dataset has m={data.m}", module="cli")
    idx = build_fused_index(data, w, BuildParams(args.gamma, args.eps, _seed(args)))
    idx.save(args.out)
    deg = idx.degrees()
    print(f"wrote {args.out} (n={idx.n}, mean degree {deg.mean():.2f}, seed {idx.seed}, "
          f"repair edges {len(idx.repair_edges)})")
    return 0


def cmd_search(args) -> int:
    from mstm.evaluation import mean_recall
    from mstm.index import FusedIndex
    from mstm.io import load_queries, write_fvecs, write_ivecs
    from mstm.search import SearchParams, Searcher

    man, data = _load(args.manifest)
    idx = FusedIndex.load(args.index, data)
    w = _weights(args, required=False)
    if w is not None and w.m != idx.m:
        raise UsageError(f"weights have m={w.m} but the index has m={idx.m}", module="cli")
    queries = load_queries(man, data.dims)
    params = SearchParams(k=args.k, l=args.l, rng_seed=_seed(args), pruning=not args.no_pruning,
                          seed_only_init=args.seed_only_init, paper_order=args.paper_order)
    s = Searcher(idx, data, w, args.paper_order)
    outs = s.search_batch(queries, params)
    if args.out:
        out = Path(args.out)
        k = max(len(o.ids) for o in outs)
        ids = np.full((len(outs), k), -1, dtype=np.int32)
        sc = np.zeros((len(outs), k), dtype=np.float32)
        for j, o in enumerate(outs):
            ids[j, : len(o.ids)] = o.ids
            sc[j, : len(o.ids)] = o.scores
        if out.suffix == ".ivecs":
            write_ivecs(out, ids)
            write_fvecs(out.with_suffix(".scores.fvecs"), sc)
        else:
            with open(out, "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(["query", "rank", "id", "score"])
                for j, o in enumerate(outs):
                    for r, (i, v) in enumerate(zip(o.ids, o.scores)):
                        wr.writerow([j, r, int(i), f"{float(v):.7f}"])
    visited = np.mean([o.visited for o in outs])
    pruned = np.mean([o.pruned for o in outs])
    print(f"{len(outs)} queries, mean visited {visited:.1f}, mean pruned {pruned:.1f}")
    truth = _truth(args, man)
    if truth is not None:
        if len(truth) != len(outs):
            raise LoadError(f"truth has {len(truth)} rows for {len(outs)} queries")
        print(f"recall@{args.k} = {mean_recall([o.ids for o in outs], truth, args.k):.4f}")
    return 0


def cmd_bench(args) -> int:
    from mstm.baselines import MrIndexSet
    from mstm.errors import SetupError
    from mstm.evaluation import Artifacts, run_bench
    from mstm.index import FusedIndex
    from mstm.io import load_queries

    man, data = _load(args.manifest)
    queries = load_queries(man, data.dims)
    truth = _truth(args, man)
    if truth is None:
        raise SetupError("no ground truth: pass --truth or add truth to the manifest's [queries]")
    art = Artifacts(weights=_weights(args, required=False))
    if args.index:
        art.must = FusedIndex.load(args.index, data)
        if art.weights is not None and art.weights.m != art.must.m:
            raise UsageError(f"weights have m={art.weights.m} but the index has m={art.must.m}",
                             module="cli")
    if args.mr_index:
        art.mr = MrIndexSet([FusedIndex.load(p, data) for p in args.mr_index])
    if args.je_index:
        art.je = FusedIndex.load(args.je_index, data)
    rep = run_bench(data, queries, truth, args.frameworks, args.l_sweep, art, k=args.k,
                    trials=args.trials, rng_seed=_seed(args), pruning=not args.no_pruning,
                    mr_candidates=args.mr_candidates)
    print(rep.table())
    if args.out:
        rep.to_csv(args.out)
        print(f"wrote {args.out}")
    if args.figure:
        from mstm.plotting import plot_recall_qps

        plot_recall_qps(rep, args.figure, title=data.name)
        print(f"wrote {args.figure}")
    return 0


# ---- parser -----------------------------------------------------------------


def _frameworks(text: str) -> list:
    from mstm.evaluation import FRAMEWORKS

    out = [x.strip() for x in text.split(",") if x.strip()]
    bad = [x for x in out if x not in FRAMEWORKS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"unknown framework(s) {bad}; choose from {','.join(FRAMEWORKS)}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mstm", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="global RNG seed (overrides defaults and spec files)")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset from a spec file")
    g.add_argument("--spec", type=Path, required=True)
    g.add_argument("--out", type=Path, required=True, help="output directory")
    g.add_argument("--name", default=None)
    g.set_defaults(func=cmd_gen)

    g = sub.add_parser("gt", help="exact ground truth under given weights")
    g.add_argument("--manifest", type=Path, required=True)
    _add_weights(g)
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--out", type=Path, required=True, help="truth .ivecs")
    g.set_defaults(func=cmd_gt)

    g = sub.add_parser("train-weights", help="learn modality weights by contrastive training")
    g.add_argument("--manifest", type=Path, required=True)
    g.add_argument("--positives", type=Path, required=True, help="ivecs: positive object id per query")
    g.add_argument("--lr", type=float, default=0.002)
    g.add_argument("--iterations", type=int, default=700)
    g.add_argument("--negatives", type=int, default=10)
    g.add_argument("--minibatch", type=int, default=64)
    g.add_argument("--remine-every", type=int, default=50)
    g.add_argument("--mining", choices=("hard", "random"), default="hard")
    g.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    g.add_argument("--use-composition", action="store_true",
                   help="train with composition vectors in the modality-0 slot")
    g.add_argument("--out", type=Path, required=True, help="weights JSON")
    g.add_argument("--loss-csv", type=Path, default=None)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("build", help="build a fused index")
    g.add_argument("--manifest", type=Path, required=True)
    wg = _add_weights(g)
    wg.add_argument("--one-hot", type=int, default=None, metavar="I",
                    help="index modality I alone (MR/JE baselines)")
    g.add_argument("--gamma", type=int, default=30, help="max out-degree")
    g.add_argument("--eps", type=int, default=3, help="NN-Descent sweeps")
    g.add_argument("--threads", type=int, default=None)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_build)

    g = sub.add_parser("search", help="joint search for every query in the manifest")
    g.add_argument("--manifest", type=Path, required=True)
    g.add_argument("--index", type=Path, required=True)
    _add_weights(g, " (overrides the index's weights)")
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--l", type=int, default=None, help="result pool size (default 20k)")
    g.add_argument("--no-pruning", action="store_true")
    g.add_argument("--seed-only-init", action="store_true", help="start the pool from the seed alone")
    g.add_argument("--paper-order", action="store_true", help="scan modalities in index order")
    g.add_argument("--truth", type=Path, default=None)
    g.add_argument("--out", type=Path, default=None, help=".csv or .ivecs (scores go to .scores.fvecs)")
    g.set_defaults(func=cmd_search)

    g = sub.add_parser("bench", help="recall / QPS sweep across frameworks")
    g.add_argument("--manifest", type=Path, required=True)
    g.add_argument("--index", type=Path, default=None, help="fused index (must)")
    g.add_argument("--mr-index", type=Path, nargs="+", default=None, help="one-hot indexes, modality order")
    g.add_argument("--je-index", type=Path, default=None, help="modality-0 index")
    _add_weights(g, " (must / must-exact)")
    g.add_argument("--truth", type=Path, default=None)
    g.add_argument("--frameworks", "--framework", type=_frameworks, default=["must"])
    g.add_argument("--l-sweep", type=_ints, default=[700, 1000, 1500, 2000, 4000])
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--trials", type=int, default=3)
    g.add_argument("--mr-candidates", type=int, default=100, help="candidates per MR stream")
    g.add_argument("--no-pruning", action="store_true")
    g.add_argument("--out", type=Path, default=None, help="CSV report")
    g.add_argument("--figure", type=Path, default=None, help="recall/QPS plot (needs matplotlib)")
    g.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MSTMError as exc:
        print(f"mstm {args.cmd}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"mstm {args.cmd}: error: [io] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
