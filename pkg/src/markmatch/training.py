"""Training loops for the dense-batch objective and the isolated-pair baseline,
plus pair-F1 and top-k retrieval evaluation.

A dataset is a list of (writer_id, [MarkImage, ...]) groups as produced by
`synth.generate_dataset`.  Batches pair two distinct marks per writer so the
similarity matrix's diagonal holds the positives.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import retrieval
from .encoder import EncoderConfig, EncoderParams, _backward, _forward, _images_to_batch, init_params
from .errors import TrainingDivergedError
from .losses import LossConfig, chain_to_embeddings, dual_loss, dual_loss_grad, similarity_matrix
from .rng import check_seed, rng_from

_DOMAIN_TRAIN = 404
_DOMAIN_EVAL = 505


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 30
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    steps_per_epoch: int = 0  # 0: one pass worth of marks per epoch

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for in-batch negatives")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        check_seed(self.seed)


@dataclass(frozen=True)
class TrainingBatch:
    a_side: list
    b_side: list
    writer_ids: list


@dataclass
class TrainReport:
    epoch_losses: list
    params: EncoderParams
    wall_seconds: float


def _check_dataset(dataset, n: int) -> None:
    if len(dataset) < n:
        raise ValueError(f"need >= {n} writers, dataset has {len(dataset)}")
    for writer_id, marks in dataset:
        if len(marks) < 2:
            raise ValueError(f"writer {writer_id} has {len(marks)} marks, need >= 2")


def make_batch(dataset, n: int, rng: np.random.Generator) -> TrainingBatch:
    """n distinct writers, two distinct marks each; a/b sides aligned by row."""
    _check_dataset(dataset, n)
    writer_idx = rng.choice(len(dataset), size=n, replace=False)
    a_side, b_side, writer_ids = [], [], []
    for wi in writer_idx:
        writer_id, marks = dataset[int(wi)]
        mi = rng.choice(len(marks), size=2, replace=False)
        a_side.append(marks[int(mi[0])])
        b_side.append(marks[int(mi[1])])
        writer_ids.append(writer_id)
    return TrainingBatch(a_side=a_side, b_side=b_side, writer_ids=writer_ids)


class _Adam:
    """Adaptive-moment updates over a fixed list of parameter tensors."""

    def __init__(self, tensors, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(t) for t in tensors]
        self.v = [np.zeros_like(t) for t in tensors]
        self.t = 0

    def step(self, tensors, grads) -> None:
        cfg = self.cfg
        self.t += 1
        bias1 = 1.0 - cfg.beta1**self.t
        bias2 = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + cfg.adam_eps)


def _steps_per_epoch(dataset, cfg: TrainConfig) -> int:
    if cfg.steps_per_epoch > 0:
        return cfg.steps_per_epoch
    total_marks = sum(len(marks) for _w, marks in dataset)
    return max(1, total_marks // cfg.batch_size)


def _run_training(dataset, cfg: TrainConfig, step_fn, progress: bool) -> TrainReport:
    _check_dataset(dataset, cfg.batch_size)
    start = time.perf_counter()
    params = init_params(cfg.encoder, cfg.seed)
    adam = _Adam(params.tensors(), cfg)
    rng = rng_from(_DOMAIN_TRAIN, cfg.seed)
    steps = _steps_per_epoch(dataset, cfg)

    epoch_losses = []
    step_index = 0
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(steps):
            batch = make_batch(dataset, cfg.batch_size, rng)
            try:
                loss_value, grad_tensors = step_fn(params, batch, rng)
            except ValueError as exc:
                # non-finite activations surface as argument errors downstream
                raise TrainingDivergedError(step=step_index, value=float("nan")) from exc
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(step=step_index, value=loss_value)
            adam.step(params.tensors(), grad_tensors)
            total += loss_value
            step_index += 1
        epoch_losses.append(total / steps)
        if progress:
            print(f"epoch {epoch} loss {epoch_losses[-1]:.6f}", flush=True)
    return TrainReport(
        epoch_losses=epoch_losses, params=params, wall_seconds=time.perf_counter() - start
    )


def _contrastive_step(params: EncoderParams, batch: TrainingBatch, cfg: TrainConfig):
    n = len(batch.a_side)
    images = list(batch.a_side) + list(batch.b_side)
    cache = _forward(params, _images_to_batch(params, images))
    emb_a = cache.embeddings[:n]
    emb_b = cache.embeddings[n:]
    S = similarity_matrix(emb_a, emb_b, cfg.loss)
    breakdown = dual_loss(S, cfg.loss)
    grad_a, grad_b = chain_to_embeddings(dual_loss_grad(S, cfg.loss), emb_a, emb_b, cfg.loss)
    grads = _backward(params, cache, np.concatenate([grad_a, grad_b], axis=0))
    return breakdown.total, grads.tensors()


def train_contrastive(dataset, cfg: TrainConfig = TrainConfig(), progress: bool = False) -> TrainReport:
    """Gradient descent on the dense-batch dual loss; deterministic in cfg.seed."""

    def step(params, batch, _rng):
        return _contrastive_step(params, batch, cfg)

    return _run_training(dataset, cfg, step, progress)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _baseline_step(params: EncoderParams, batch: TrainingBatch, cfg: TrainConfig, rng):
    """One positive and one sampled cross-writer negative per batch row."""
    n = len(batch.a_side)
    tau = cfg.loss.temperature
    images = list(batch.a_side) + list(batch.b_side)
    cache = _forward(params, _images_to_batch(params, images))
    emb_a = cache.embeddings[:n]
    emb_b = cache.embeddings[n:]

    neg_j = (np.arange(n) + 1 + rng.integers(0, n - 1, size=n)) % n  # j != i

    grad = np.zeros_like(cache.embeddings)
    total = 0.0
    pair_count = 2 * n
    for i in range(n):
        for j, label in ((i, 1), (int(neg_j[i]), 0)):
            s = float(np.dot(emb_a[i], emb_b[j])) / tau
            total += max(s, 0.0) - s * label + float(np.log1p(np.exp(-abs(s))))
            dscore = (float(_sigmoid(np.array(s))) - label) / (tau * pair_count)
            grad[i] += dscore * emb_b[j]
            grad[n + j] += dscore * emb_a[i]
    grads = _backward(params, cache, grad)
    return total / pair_count, grads.tensors()


def train_pairwise_baseline(dataset, cfg: TrainConfig = TrainConfig(), progress: bool = False) -> TrainReport:
    """Isolated-pair BCE baseline: same encoder and loop, pair scores + BCE."""

    def step(params, batch, rng):
        return _baseline_step(params, batch, cfg, rng)

    return _run_training(dataset, cfg, step, progress)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def make_eval_pairs(dataset, count: int, rng: np.random.Generator):
    """Balanced same-writer / cross-writer pairs for pair-F1 evaluation."""
    _check_dataset(dataset, 2)
    pairs = []
    for idx in range(count):
        if idx % 2 == 0:
            wi = int(rng.integers(0, len(dataset)))
            _writer, marks = dataset[wi]
            mi = rng.choice(len(marks), size=2, replace=False)
            pairs.append((marks[int(mi[0])], marks[int(mi[1])], 1))
        else:
            wi, wj = rng.choice(len(dataset), size=2, replace=False)
            _wa, marks_a = dataset[int(wi)]
            _wb, marks_b = dataset[int(wj)]
            pairs.append(
                (
                    marks_a[int(rng.integers(0, len(marks_a)))],
                    marks_b[int(rng.integers(0, len(marks_b)))],
                    0,
                )
            )
    return pairs


def evaluate_pair_f1(params: EncoderParams, eval_pairs, cfg: LossConfig = LossConfig()):
    """Best F1 over candidate thresholds (midpoints of sorted sigmoid scores).

    A pair is predicted same-writer when its score >= threshold; returns
    (best_f1, best_threshold).
    """
    from .encoder import embed_batch

    labels = np.array([int(label) for _x, _y, label in eval_pairs])
    if len(set(labels.tolist())) < 2:
        raise ValueError("eval set must contain both labels")
    xs = embed_batch(params, [x for x, _y, _l in eval_pairs])
    ys = embed_batch(params, [y for _x, y, _l in eval_pairs])
    logits = np.array([float(np.dot(x, y)) / cfg.temperature for x, y in zip(xs, ys)])
    scores = _sigmoid(logits)

    order = np.sort(scores)
    candidates = [order[0]] + [(order[i] + order[i + 1]) / 2.0 for i in range(len(order) - 1)]
    best_f1, best_thr = 0.0, float(candidates[0])
    for thr in candidates:
        predicted = scores >= thr
        tp = int(np.sum(predicted & (labels == 1)))
        fp = int(np.sum(predicted & (labels == 0)))
        fn = int(np.sum(~predicted & (labels == 1)))
        if tp + fp == 0 or tp + fn == 0:
            f1 = 0.0
        else:
            precision = tp / (tp + fp)
            recall = tp / (tp + fn)
            f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        if f1 > best_f1:
            best_f1, best_thr = f1, float(thr)
    return best_f1, best_thr


def evaluate_topk(params: EncoderParams, queries, pool, k: int, cfg: LossConfig = LossConfig()) -> float:
    """Fraction of queries with a same-writer pool mark in the top k."""
    from .encoder import embed_batch

    if k < 1:
        raise ValueError("k must be >= 1")
    if not queries or not pool:
        raise ValueError("queries and pool must be non-empty")
    pool_writers = {wid for _m, wid in pool}
    pool_ids = {(m.ballot_id, m.mark_id) for m, _w in pool if m.mark_id}
    for m, wid in queries:
        if wid not in pool_writers:
            raise ValueError(f"query writer {wid} has no pool mark")
        if m.mark_id and (m.ballot_id, m.mark_id) in pool_ids:
            raise ValueError(f"query mark {m.mark_id} is also in the pool")

    store = retrieval.Pool(dim=params.config.embedding_dim)
    pool_embs = embed_batch(params, [m for m, _w in pool])
    writer_by_alias = {}
    for (mark, wid), emb in zip(pool, pool_embs):
        alias = store.enroll(emb, ballot_id=f"{wid}/{mark.mark_id or id(mark)}", mark_index=0)
        writer_by_alias[alias] = wid

    hits = 0
    for (mark, wid), emb in zip(queries, embed_batch(params, [m for m, _w in queries])):
        matches = retrieval.query(store, emb, k=k, cfg=cfg)
        if any(writer_by_alias[m.alias] == wid for m in matches):
            hits += 1
    return hits / len(queries)
