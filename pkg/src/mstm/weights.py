"""Per-modality weight learning by contrastive training on mined negatives.

For an anchor ``p`` with positive object ``p+`` and negatives ``N-`` the loss is
the softmax cross-entropy of the positive against the negatives, with logits
given by joint scores ``sum_i w_i**2 * ip_i``. Since every logit is linear in
the squared weights, the per-modality inner products are computed once and
both loss and gradient reduce to small matrix operations:

    dL/dw_i = 2 w_i * (E_softmax[ip_i] - ip_i(p, p+))
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mstm.core import WeightVector, topk_desc, topk_rows
from mstm.errors import TrainingError, UsageError
from mstm.io import MultiModalDataset, QueryBatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    iterations: int = 700
    negatives: int = 10
    minibatch: int = 64
    remine_every: int = 50
    rng_seed: int = 0
    mining: str = "hard"  # or "random"
    optimizer: str = "adam"  # or "sgd"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise UsageError(f"learning_rate must be > 0, got {self.learning_rate}", module="weights")
        if self.iterations < 1:
            raise UsageError(f"iterations must be >= 1, got {self.iterations}", module="weights")
        if self.negatives < 1:
            raise UsageError(f"negatives must be >= 1, got {self.negatives}", module="weights")
        if self.minibatch < 1:
            raise UsageError(f"minibatch must be >= 1, got {self.minibatch}", module="weights")
        if self.remine_every < 1:
            raise UsageError(f"remine_every must be >= 1, got {self.remine_every}", module="weights")
        if self.mining not in ("hard", "random"):
            raise UsageError(f"mining must be 'hard' or 'random', got {self.mining!r}", module="weights")
        if self.optimizer not in ("adam", "sgd"):
            raise UsageError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}", module="weights")


@dataclass
class TrainReport:
    weights: WeightVector
    loss: list = field(default_factory=list)
    recall: list = field(default_factory=list)
    initial: Optional[WeightVector] = None


class ModalityScores:
    """Per-modality inner products between anchors and the truth set.

    ``ips[a, o, i]`` is ``<anchor_a_i, object_o_i>``, zero where the anchor
    lacks modality ``i``.
    """

    def __init__(self, anchors: QueryBatch, T: MultiModalDataset):
        if T.n == 0:
            raise UsageError("truth set T is empty", module="weights")
        if anchors.m != T.m:
            raise UsageError(f"anchors have m={anchors.m}, T has m={T.m}", module="weights")
        ips = np.empty((anchors.nq, T.n, T.m), dtype=np.float64)
        for i in range(T.m):
            ips[:, :, i] = anchors.vectors[i].astype(np.float64) @ T.vectors[i].astype(np.float64).T
            ips[~anchors.mask[:, i], :, i] = 0.0
        self.ips = ips

    @property
    def n_anchors(self) -> int:
        return self.ips.shape[0]

    @property
    def n(self) -> int:
        return self.ips.shape[1]

    def joint(self, w: WeightVector, rows=None) -> np.ndarray:
        block = self.ips if rows is None else self.ips[rows]
        return block @ w.squared


def mine_negatives(scores: ModalityScores, anchor: int, positive: int, w: WeightVector,
                   k: int) -> np.ndarray:
    """Exact top-``k`` of T under ``w`` for one anchor, minus the positive."""
    top = topk_desc(scores.joint(w, [anchor])[0], k)
    return top[top != positive]


def mine_all(scores: ModalityScores, positives: np.ndarray, w: WeightVector, k: int) -> list:
    top = topk_rows(scores.joint(w), k)
    return [row[row != p] for row, p in zip(top, positives)]


def random_negatives(n: int, positives: np.ndarray, k: int, rng: np.random.Generator) -> list:
    out = []
    for p in positives:
        pick = rng.choice(n - 1, size=min(k, n - 1), replace=False)
        pick[pick >= p] += 1
        out.append(np.sort(pick))
    return out


def _batch_terms(scores, rows, positives, negatives):
    """Stack per-anchor candidate IPs: (B, 1+K, m) plus a validity mask."""
    kmax = max((len(negatives[a]) for a in rows), default=0)
    m = scores.ips.shape[2]
    ips = np.zeros((len(rows), 1 + kmax, m))
    valid = np.zeros((len(rows), 1 + kmax), dtype=bool)
    for b, a in enumerate(rows):
        neg = negatives[a]
        ips[b, 0] = scores.ips[a, positives[a]]
        ips[b, 1 : 1 + len(neg)] = scores.ips[a, neg]
        valid[b, : 1 + len(neg)] = True
    return ips, valid


def _loss_and_grad(ips, valid, w: WeightVector):
    logits = ips @ w.squared
    logits = np.where(valid, logits, -np.inf)
    mx = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - mx)
    z = ex.sum(axis=1, keepdims=True)
    per = -(logits[:, 0] - mx[:, 0] - np.log(z[:, 0]))
    prob = ex / z
    expected = np.einsum("bk,bkm->bm", prob, ips)
    grad = 2.0 * w.omega * np.mean(expected - ips[:, 0, :], axis=0)
    return float(np.mean(per)), grad


def contrastive_loss(scores: ModalityScores, rows, positives, negatives, w: WeightVector) -> float:
    """Mean over anchors ``rows`` of ``-log softmax`` of the positive."""
    rows = list(rows)
    if not rows:
        return 0.0
    return _loss_and_grad(*_batch_terms(scores, rows, positives, negatives), w)[0]


def loss_gradient(scores: ModalityScores, rows, positives, negatives, w: WeightVector) -> np.ndarray:
    """Gradient with respect to ``w`` (not ``w**2``), negatives held fixed."""
    rows = list(rows)
    if not rows:
        return np.zeros(w.m)
    return _loss_and_grad(*_batch_terms(scores, rows, positives, negatives), w)[1]


def recall_at_1(scores: ModalityScores, positives: np.ndarray, w: WeightVector) -> float:
    best = np.argmax(scores.joint(w), axis=1)
    return float(np.mean(best == positives))


def train_weights(anchors: QueryBatch, positives, T: MultiModalDataset, cfg: TrainConfig = TrainConfig(),
                  scores: ModalityScores | None = None) -> TrainReport:
    """Learn weights from anchors (queries) and their positive object ids in T.

    Weights start uniform in (0, 1]. Negatives are re-mined every
    ``cfg.remine_every`` steps under the current weights (or resampled at
    random when ``cfg.mining == "random"``). The recorded loss and recall are
    evaluated each step over all anchors against hard negatives mined under
    the current weights, whichever mining drives training.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1)
    if anchors.nq == 0:
        raise UsageError("no training anchors", module="weights")
    if positives.size != anchors.nq:
        raise UsageError(f"{positives.size} positives for {anchors.nq} anchors", module="weights")
    if T.n == 0:
        raise UsageError("truth set T is empty", module="weights")
    if positives.min() < 0 or positives.max() >= T.n:
        raise UsageError("positive id out of range of T", module="weights")
    scores = scores or ModalityScores(anchors, T)
    rng = np.random.default_rng(cfg.rng_seed)
    omega = 1.0 - rng.random(T.m)
    w = WeightVector(omega)
    initial = w
    A = anchors.nq
    k = min(cfg.negatives, T.n)
    m1 = np.zeros(T.m)
    m2 = np.zeros(T.m)
    b1, b2, eps = 0.9, 0.999, 1e-8
    report = TrainReport(w, initial=initial)
    every = np.arange(A)
    negatives = None
    for step in range(cfg.iterations):
        if step % cfg.remine_every == 0:
            if cfg.mining == "hard":
                negatives = mine_all(scores, positives, w, k)
            else:
                negatives = random_negatives(T.n, positives, k, rng)
        rows = rng.choice(A, size=cfg.minibatch, replace=A < cfg.minibatch)
        loss, grad = _loss_and_grad(*_batch_terms(scores, rows, positives, negatives), w)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingError(f"loss diverged (non-finite) at step {step}")
        if cfg.optimizer == "adam":
            m1 = b1 * m1 + (1 - b1) * grad
            m2 = b2 * m2 + (1 - b2) * grad * grad
            mhat = m1 / (1 - b1 ** (step + 1))
            vhat = m2 / (1 - b2 ** (step + 1))
            omega = omega - cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
        else:
            omega = omega - cfg.learning_rate * grad
        omega = np.maximum(omega, 0.0)
        if not np.any(omega > 0):
            raise TrainingError(f"all weights clamped to zero at step {step}")
        w = WeightVector(omega)
        eval_neg = mine_all(scores, positives, w, k)
        ev = contrastive_loss(scores, every, positives, eval_neg, w)
        if not np.isfinite(ev):
            raise TrainingError(f"evaluation loss diverged at step {step}")
        report.loss.append(ev)
        report.recall.append(recall_at_1(scores, positives, w))
    report.weights = w
    log.info("trained weights^2=%s final loss %.4f", np.round(w.squared, 4).tolist(), report.loss[-1])
    return report
