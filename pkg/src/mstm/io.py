"""Dataset ingestion: fvecs/ivecs, manifests, synthetic data, fingerprints.

fvecs/ivecs records are ``int32 d`` followed by ``d`` little-endian float32
(fvecs) or int32 (ivecs) values.

Manifests are INI files read with :mod:`configparser`::

    [dataset]
    name = toy
    m = 2
    n = 1000            ; optional, checked when given

    [modality.0]
    name = image
    path = base_0.fvecs ; relative to the manifest's directory
    dim = 32
    normalize = true

    [queries]            ; optional
    modality.0 = query_0.fvecs
    modality.1 = query_1.fvecs
    composition = query_comp.fvecs   ; optional, replaces modality 0 for JE/MR
    truth = truth.ivecs               ; optional ground truth

A query record whose vector is all zeros marks that modality as absent for
that query. A modality missing from ``[queries]`` is absent for every query.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mstm.core import MultiVector, WeightVector
from mstm.errors import FormatError, LoadError, UsageError

log = logging.getLogger(__name__)

NORM_TOL = 1e-4


# --------------------------------------------------------------------------
# fvecs / ivecs


def _read_vecs(path, dtype) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw:
        return np.empty((0, 0), dtype=dtype)
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header at byte offset 0")
    d = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if d <= 0:
        raise FormatError(f"{path}: invalid dimension {d} at byte offset 0")
    rec = 4 * (d + 1)
    if len(raw) % rec:
        offset = (len(raw) // rec) * rec
        raise FormatError(f"{path}: truncated record at byte offset {offset}")
    words = np.frombuffer(raw, dtype="<i4").reshape(-1, d + 1)
    bad = np.flatnonzero(words[:, 0] != d)
    if bad.size:
        raise FormatError(
            f"{path}: dimension {int(words[bad[0], 0])} != {d} at byte offset {int(bad[0]) * rec}"
        )
    body = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).reshape(-1, d + 1)
    return body[:, 1:].astype(dtype)


def _write_vecs(path, vectors, dtype) -> None:
    arr = np.asarray(vectors)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a 2-d array, got shape {arr.shape}")
    n, d = arr.shape
    out = np.empty((n, d + 1), dtype=np.dtype(dtype).newbyteorder("<"))
    out[:, 1:] = arr
    out.view("<i4")[:, 0] = d
    Path(path).write_bytes(out.tobytes() if n else b"")


def read_fvecs(path) -> np.ndarray:
    return _read_vecs(path, np.float32)


def write_fvecs(path, vectors) -> None:
    _write_vecs(path, vectors, np.float32)


def read_ivecs(path) -> np.ndarray:
    return _read_vecs(path, np.int32)


def write_ivecs(path, vectors) -> None:
    _write_vecs(path, vectors, np.int32)


# --------------------------------------------------------------------------
# datasets


def _check_finite(name: str, arr: np.ndarray) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0])
        raise LoadError(f"{name}: non-finite component in record {row}")


def _normalize(name: str, arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise LoadError(f"{name}: zero-norm vector at record {int(zero[0])}")
    return (arr / norms[:, None]).astype(np.float32)


@dataclass
class MultiModalDataset:
    """``n`` objects, each with one unit vector in each of ``m`` modalities."""

    vectors: list
    names: list = field(default_factory=list)
    name: str = "dataset"

    def __post_init__(self):
        self.vectors = [np.ascontiguousarray(v, dtype=np.float32) for v in self.vectors]
        if not self.vectors:
            raise LoadError("dataset has no modalities")
        counts = [v.shape[0] for v in self.vectors]
        if len(set(counts)) != 1:
            listing = ", ".join(f"modality {i}: {c}" for i, c in enumerate(counts))
            raise LoadError(f"record counts differ across modalities ({listing})")
        if not self.names:
            self.names = [f"m{i}" for i in range(self.m)]
        self._concat = None

    @property
    def n(self) -> int:
        return self.vectors[0].shape[0]

    @property
    def m(self) -> int:
        return len(self.vectors)

    @property
    def dims(self) -> list:
        return [v.shape[1] for v in self.vectors]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)]).astype(np.int64)

    @property
    def concat(self) -> np.ndarray:
        """Unweighted side-by-side layout ``(n, sum(dims))`` used by kernels."""
        if self._concat is None:
            self._concat = np.ascontiguousarray(np.hstack(self.vectors))
        return self._concat

    def weighted(self, w: WeightVector) -> np.ndarray:
        """Explicit concatenated vectors ``[w_0 o_0, ...]`` in float64."""
        return np.hstack([w.omega[i] * v.astype(np.float64) for i, v in enumerate(self.vectors)])

    def object(self, i: int) -> MultiVector:
        return MultiVector(tuple(v[i] for v in self.vectors))

    def subset(self, ids) -> "MultiModalDataset":
        ids = np.asarray(ids)
        return MultiModalDataset([v[ids] for v in self.vectors], list(self.names), self.name)

    def fingerprint(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        for v in self.vectors:
            h.update(np.int64(v.shape[1]).tobytes())
            h.update(np.ascontiguousarray(v, dtype="<f4").tobytes())
        return int.from_bytes(h.digest(), "little")

    def check_unit(self, tol: float = NORM_TOL) -> None:
        for i, v in enumerate(self.vectors):
            norms = np.linalg.norm(v.astype(np.float64), axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
            if bad.size:
                raise LoadError(
                    f"modality {i}: record {int(bad[0])} has norm {norms[bad[0]]:.6f}"
                )


@dataclass
class QueryBatch:
    """Query vectors per modality with a per-query presence mask.

    ``vectors[i]`` is ``(nq, d_i)``; rows of absent slots are zero.
    ``composition`` optionally holds a modality-0-space vector per query.
    """

    vectors: list
    mask: np.ndarray
    composition: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vectors = [np.ascontiguousarray(v, dtype=np.float32) for v in self.vectors]
        self.mask = np.asarray(self.mask, dtype=bool)
        nq = self.mask.shape[0]
        for i, v in enumerate(self.vectors):
            if v.shape[0] != nq:
                raise LoadError(f"query modality {i} has {v.shape[0]} rows, expected {nq}")
            self.vectors[i] = np.where(self.mask[:, i : i + 1], v, 0).astype(np.float32)
        if self.composition is not None:
            self.composition = np.ascontiguousarray(self.composition, dtype=np.float32)

    @classmethod
    def from_arrays(cls, vectors: Sequence[Optional[np.ndarray]], dims=None, composition=None):
        nq = next(v.shape[0] for v in vectors if v is not None)
        mats, cols = [], []
        for i, v in enumerate(vectors):
            if v is None:
                mats.append(np.zeros((nq, dims[i]), dtype=np.float32))
                cols.append(np.zeros(nq, dtype=bool))
            else:
                v = np.asarray(v, dtype=np.float32)
                mats.append(v)
                cols.append(np.any(v != 0, axis=1))
        return cls(mats, np.stack(cols, axis=1), composition)

    @property
    def nq(self) -> int:
        return self.mask.shape[0]

    @property
    def m(self) -> int:
        return len(self.vectors)

    @property
    def concat(self) -> np.ndarray:
        return np.ascontiguousarray(np.hstack(self.vectors))

    def query(self, j: int, use_composition: bool = False) -> MultiVector:
        vecs = [v[j] if self.mask[j, i] else None for i, v in enumerate(self.vectors)]
        if use_composition and self.composition is not None:
            vecs[0] = self.composition[j]
        return MultiVector(tuple(vecs))

    def with_composition(self) -> "QueryBatch":
        """Batch whose modality-0 slot is the composition vector."""
        if self.composition is None:
            return self
        vecs = list(self.vectors)
        vecs[0] = self.composition
        mask = self.mask.copy()
        mask[:, 0] = True
        return QueryBatch(vecs, mask)

    def subset(self, rows) -> "QueryBatch":
        rows = np.asarray(rows)
        comp = None if self.composition is None else self.composition[rows]
        return QueryBatch([v[rows] for v in self.vectors], self.mask[rows], comp)


@dataclass
class Manifest:
    path: Path
    name: str
    modalities: list  # (name, path, dim, normalize)
    n: Optional[int] = None
    query_paths: dict = field(default_factory=dict)
    composition_path: Optional[Path] = None
    truth_path: Optional[Path] = None


def _truthy(value: str) -> bool:
    return value.strip().lower() in ("1", "true", "yes", "on")


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"manifest not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read(path)
    if "dataset" not in cp:
        raise LoadError(f"{path}: missing [dataset] section")
    base = path.parent
    ds = cp["dataset"]
    m = ds.getint("m")
    if m is None or m < 1:
        raise LoadError(f"{path}: [dataset] m must be a positive integer")
    mods = []
    for i in range(m):
        sec = f"modality.{i}"
        if sec not in cp:
            raise LoadError(f"{path}: missing [{sec}] section")
        s = cp[sec]
        mods.append(
            (
                s.get("name", f"m{i}"),
                base / s["path"],
                s.getint("dim"),
                _truthy(s.get("normalize", "true")),
            )
        )
    man = Manifest(path, ds.get("name", path.stem), mods, ds.getint("n"))
    if "queries" in cp:
        q = cp["queries"]
        for i in range(m):
            key = f"modality.{i}"
            if key in q:
                man.query_paths[i] = base / q[key]
        if "composition" in q:
            man.composition_path = base / q["composition"]
        if "truth" in q:
            man.truth_path = base / q["truth"]
    return man


def write_manifest(path, name: str, modality_files: Sequence, dims: Sequence[int],
                   names: Sequence[str] | None = None, normalize: bool = True,
                   query_files: dict | None = None, composition: str | None = None,
                   truth: str | None = None, n: int | None = None) -> None:
    cp = configparser.ConfigParser()
    cp["dataset"] = {"name": name, "m": str(len(modality_files))}
    if n is not None:
        cp["dataset"]["n"] = str(n)
    for i, (f, d) in enumerate(zip(modality_files, dims)):
        cp[f"modality.{i}"] = {
            "name": names[i] if names else f"m{i}",
            "path": str(f),
            "dim": str(d),
            "normalize": "true" if normalize else "false",
        }
    qs = {}
    for i, f in (query_files or {}).items():
        qs[f"modality.{i}"] = str(f)
    if composition:
        qs["composition"] = composition
    if truth:
        qs["truth"] = truth
    if qs:
        cp["queries"] = qs
    with open(path, "w") as fh:
        cp.write(fh)


def load_dataset(manifest) -> MultiModalDataset:
    man = manifest if isinstance(manifest, Manifest) else read_manifest(manifest)
    vectors, problems = [], []
    for i, (name, fpath, dim, normalize) in enumerate(man.modalities):
        if not Path(fpath).exists():
            raise LoadError(f"modality {i} ({name}): file not found: {fpath}")
        arr = read_fvecs(fpath)
        if dim is not None and arr.shape[0] and arr.shape[1] != dim:
            problems.append(f"modality {i} ({name}): declared dim {dim}, file has {arr.shape[1]}")
        _check_finite(f"modality {i} ({name})", arr)
        if normalize:
            arr = _normalize(f"modality {i} ({name})", arr)
        vectors.append(arr)
    counts = [v.shape[0] for v in vectors]
    if len(set(counts)) != 1:
        problems.append(
            "record counts differ: " + ", ".join(f"modality {i}={c}" for i, c in enumerate(counts))
        )
    if man.n is not None and counts and counts[0] != man.n and len(set(counts)) == 1:
        problems.append(f"manifest declares n={man.n}, files hold {counts[0]}")
    if problems:
        raise LoadError("; ".join(problems))
    ds = MultiModalDataset(vectors, [mm[0] for mm in man.modalities], man.name)
    ds.check_unit()
    return ds


def load_queries(manifest, dims: Sequence[int] | None = None) -> QueryBatch:
    man = manifest if isinstance(manifest, Manifest) else read_manifest(manifest)
    if not man.query_paths and man.composition_path is None:
        raise LoadError(f"{man.path}: no [queries] section")
    dims = dims or [mm[2] for mm in man.modalities]
    raw = []
    for i in range(len(man.modalities)):
        p = man.query_paths.get(i)
        if p is None:
            raw.append(None)
            continue
        arr = read_fvecs(p)
        _check_finite(f"query modality {i}", arr)
        norms = np.linalg.norm(arr.astype(np.float64), axis=1, keepdims=True)
        arr = np.where(norms > 0, arr / np.where(norms > 0, norms, 1), 0).astype(np.float32)
        raw.append(arr)
    comp = None
    if man.composition_path is not None:
        comp = _normalize("composition queries", read_fvecs(man.composition_path))
    if all(r is None for r in raw):
        if comp is None:
            raise LoadError(f"{man.path}: query files are empty")
        raw[0] = np.zeros((comp.shape[0], dims[0]), dtype=np.float32)
    return QueryBatch.from_arrays(raw, dims, comp)


def load_truth(path) -> list:
    arr = read_ivecs(path)
    return [row[row >= 0].astype(np.int64) for row in arr]


# --------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSpec:
    """Cluster-structured multimodal data with queries and exact truth.

    Each object draws a cluster label; in every signal modality its vector is
    that cluster's centre plus Gaussian noise of scale ``noise_scale``. Noise
    modalities ignore the label and are drawn uniformly on the sphere, and
    their query vectors are fresh draws unrelated to the target object.
    """

    n: int = 1000
    dims: tuple = (32, 16)
    clusters: int = 20
    noise_scale: float = 0.3
    noise_modalities: tuple = ()
    nq: int = 100
    query_noise: float = 0.1
    truth_k: int = 10
    reference_weights: Optional[tuple] = None  # squared weights defining truth
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if self.n < 1:
            raise UsageError("synthetic n must be >= 1", module="io")
        if any(d < 2 for d in self.dims):
            raise UsageError(f"synthetic dims must be >= 2, got {self.dims}", module="io")
        if self.clusters < 1:
            raise UsageError("synthetic clusters must be >= 1", module="io")

    @property
    def m(self) -> int:
        return len(self.dims)

    @classmethod
    def from_file(cls, path) -> "SyntheticSpec":
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        if not cp.read(path):
            raise LoadError(f"synthetic spec not found: {path}")
        if "synthetic" not in cp:
            raise LoadError(f"{path}: missing [synthetic] section")
        s = cp["synthetic"]

        def ints(key, default):
            raw = s.get(key)
            if raw is None or not raw.strip():
                return default
            return tuple(int(x) for x in raw.split(","))

        ref = s.get("reference_weights")
        return cls(
            n=s.getint("n", 1000),
            dims=ints("dims", (32, 16)),
            clusters=s.getint("clusters", 20),
            noise_scale=s.getfloat("noise_scale", 0.3),
            noise_modalities=ints("noise_modalities", ()),
            nq=s.getint("queries", 100),
            query_noise=s.getfloat("query_noise", 0.1),
            truth_k=s.getint("truth_k", 10),
            reference_weights=tuple(float(x) for x in ref.split(",")) if ref else None,
            seed=s.getint("seed", 0),
            name=s.get("name", Path(path).stem),
        )


@dataclass
class SyntheticData:
    dataset: MultiModalDataset
    queries: QueryBatch
    labels: np.ndarray
    query_targets: np.ndarray
    reference: WeightVector
    truth: list


def _unit_rows(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64)
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return a / norms


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    from mstm.baselines import brute_force_topk

    rng = np.random.default_rng(spec.seed)
    labels = rng.integers(0, spec.clusters, size=spec.n)
    targets = rng.integers(0, spec.n, size=spec.nq)
    vectors, queries = [], []
    for i, d in enumerate(spec.dims):
        if i in spec.noise_modalities:
            obj = _unit_rows(rng.standard_normal((spec.n, d)))
            qry = _unit_rows(rng.standard_normal((spec.nq, d)))
        else:
            centers = _unit_rows(rng.standard_normal((spec.clusters, d)))
            obj = _unit_rows(
                centers[labels] + spec.noise_scale * rng.standard_normal((spec.n, d)) / np.sqrt(d)
            )
            qry = _unit_rows(
                obj[targets] + spec.query_noise * rng.standard_normal((spec.nq, d)) / np.sqrt(d)
            )
        vectors.append(obj.astype(np.float32))
        queries.append(qry.astype(np.float32))
    names = [f"{'noise' if i in spec.noise_modalities else 'signal'}{i}" for i in range(spec.m)]
    ds = MultiModalDataset(vectors, names, spec.name)
    qb = QueryBatch(queries, np.ones((spec.nq, spec.m), dtype=bool))
    ref = (
        WeightVector.from_squared(spec.reference_weights)
        if spec.reference_weights
        else WeightVector.uniform(spec.m)
    )
    k = min(spec.truth_k, spec.n)
    truth = [brute_force_topk(ds, qb.query(j), ref, k)[0] for j in range(spec.nq)]
    return SyntheticData(ds, qb, labels, targets, ref, truth)


def write_synthetic(data: SyntheticData, outdir, name: str | None = None) -> Path:
    """Write vectors, queries, truth and a manifest; return the manifest path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    name = name or data.dataset.name
    files, qfiles = [], {}
    for i, v in enumerate(data.dataset.vectors):
        f = f"{name}_base_{i}.fvecs"
        write_fvecs(outdir / f, v)
        files.append(f)
        qf = f"{name}_query_{i}.fvecs"
        write_fvecs(outdir / qf, data.queries.vectors[i])
        qfiles[i] = qf
    tf = f"{name}_truth.ivecs"
    k = max(len(t) for t in data.truth)
    write_ivecs(outdir / tf, np.array([np.pad(t, (0, k - len(t)), constant_values=-1) for t in data.truth]))
    write_ivecs(outdir / f"{name}_labels.ivecs", data.labels.reshape(-1, 1).astype(np.int32))
    mpath = outdir / f"{name}.manifest"
    write_manifest(
        mpath, name, files, data.dataset.dims, data.dataset.names,
        query_files=qfiles, truth=tf, n=data.dataset.n,
    )
    ref = {str(i): float(x) for i, x in enumerate(data.reference.squared)}
    (outdir / f"{name}_reference_weights.json").write_text(json.dumps(ref, indent=2) + "\n")
    write_ivecs(outdir / f"{name}_anchors.ivecs", data.query_targets.reshape(-1, 1).astype(np.int32))
    return mpath


def write_weights(path, w: WeightVector) -> None:
    Path(path).write_text(
        json.dumps({str(i): float(x) for i, x in enumerate(w.squared)}, indent=2) + "\n"
    )


def read_weights(path) -> WeightVector:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"weights file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    try:
        keys = sorted(int(k) for k in raw)
    except ValueError:
        raise FormatError(f"{path}: keys must be modality indices") from None
    if keys != list(range(len(keys))):
        raise FormatError(f"{path}: modality indices must be 0..m-1, got {keys}")
    return WeightVector.from_squared([raw[str(k)] for k in keys])
