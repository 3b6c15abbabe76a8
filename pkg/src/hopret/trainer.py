"""Contrastive training of the linear embedder.

Each training instance pairs a (question + gold prior passages) query with
its gold positive passage; the softmax denominator combines the other
instances' positives in the batch, the instance's own mined hard negatives,
and (in phase 2) a FIFO memory bank of frozen passage vectors that receive
no gradient.  Phase 1 trains the shared encoder to convergence; phase 2
freezes a copy as the passage encoder and keeps training the query side
against the growing bank.

Everything is seeded and single-threaded: a (dataset, config) pair trains
to bit-identical weights on every run.
"""

from __future__ import annotations

import json
import math
import os
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .corpus import Corpus, CorpusFormatError, Passage, passage_from_dict
from .encoders import (
    MODEL_HASH_SEED,
    LinearEncoder,
    QueryInput,
    hashed_embed,
    linear_embed_backward,
    render_passage,
    render_query,
)
from .index import FlatIndex
from .retriever import BeamConfig, retrieve
from .textproc import fnv1a64
from .vecmath import layer_norm

MODEL_MAGIC = b"MDRMDL1\x00"
MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a model file is malformed, truncated, or corrupt."""


class TrainingError(RuntimeError):
    """Raised when training diverges (non-finite loss) or inputs are unusable."""


@dataclass(frozen=True)
class TrainingExample:
    """A question with its ordered gold passages and optional hard negatives."""

    question: str
    answer: str
    positives: tuple[Passage, ...]
    hard_negatives: tuple[Passage, ...] = ()
    qtype: str | None = None
    heuristic_unresolved: bool = False

    def __post_init__(self) -> None:
        if not self.question:
            raise ValueError("question must be non-empty")
        if len(self.positives) < 1:
            raise ValueError("at least one positive passage required")
        object.__setattr__(self, "positives", tuple(self.positives))
        object.__setattr__(self, "hard_negatives", tuple(self.hard_negatives))


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults. The full-scale preset from the original setup is
    shipped as FULL_SCALE_PRESET for documentation and is not used by tests.

    `phase1_max_epochs` bounds the shared-encoder phase when the memory bank
    is enabled, so the bank phase always gets a share of the epoch budget
    even while held-out loss is still creeping down.
    """

    learning_rate: float = 0.1
    phase2_learning_rate: float = 0.3  # bank phase trains fewer parameters harder
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    dimension: int = 1024
    shared_encoder: bool = True
    use_memory_bank: bool = True
    use_hard_negatives: bool = True
    ordered: bool = True
    gradient_clip_norm: float = 2.0
    bank_capacity: int = 2048
    patience: int = 3
    phase1_max_epochs: int = 8
    dev_fraction: float = 0.2
    eval_beam_width: int = 5
    eval_sample: int = 200  # dev questions scored per epoch (full set at the end)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.phase2_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.dimension <= 1 or self.bank_capacity < 1 or self.patience < 1:
            raise ValueError("dimension, bank_capacity, and patience must be positive")
        if self.phase1_max_epochs < 1:
            raise ValueError("phase1_max_epochs must be positive")
        if not 0.0 < self.dev_fraction < 1.0:
            raise ValueError("dev_fraction must be in (0, 1)")


# Full-scale hyperparameters (RoBERTa-scale training on the original corpora);
# documented reference values, not exercised at desk scale.
FULL_SCALE_PRESET = TrainConfig(
    learning_rate=2e-5,
    batch_size=150,
    epochs=50,
    gradient_clip_norm=2.0,
    dimension=768,
)


class MemoryBank:
    """Fixed-capacity FIFO of frozen passage vectors (plus their source ids).

    Vectors come only from the frozen passage encoder and never receive
    gradients; ids let an instance skip the bank copy of its own positive.
    """

    def __init__(self, capacity: int = 2048):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._queue: deque[tuple[str, np.ndarray]] = deque(maxlen=capacity)

    def push(self, vector: np.ndarray, passage_id: str = "") -> None:
        self._queue.append((passage_id, np.asarray(vector, dtype=np.float64)))

    def __len__(self) -> int:
        return len(self._queue)

    def snapshot(self) -> tuple[np.ndarray | None, list[str]]:
        if not self._queue:
            return None, []
        ids = [pid for pid, _ in self._queue]
        matrix = np.stack([vec for _, vec in self._queue])
        return matrix, ids


# data preparation -------------------------------------------------------------


def order_positives(example: TrainingExample) -> TrainingExample:
    """Put the answer-bearing passage second (2-hop examples only).

    If both positives contain the answer, the one whose title is mentioned
    in the other passage's text is treated as the second; if neither rule
    resolves, the input order is kept and `heuristic_unresolved` is set.
    """
    if len(example.positives) != 2:
        raise ValueError(f"ordering heuristic needs exactly 2 positives, got {len(example.positives)}")
    if not example.answer:
        raise ValueError("ordering heuristic needs a non-empty answer")
    first, second = example.positives
    answer = example.answer.lower()
    in_first = answer in first.text.lower()
    in_second = answer in second.text.lower()
    if in_first != in_second:
        ordered = (second, first) if in_first else (first, second)
        return replace(example, positives=ordered, heuristic_unresolved=False)
    if in_first and in_second:
        first_mentioned = bool(first.title) and first.title.lower() in second.text.lower()
        second_mentioned = bool(second.title) and second.title.lower() in first.text.lower()
        if first_mentioned != second_mentioned:
            ordered = (second, first) if first_mentioned else (first, second)
            return replace(example, positives=ordered, heuristic_unresolved=False)
    return replace(example, heuristic_unresolved=True)


def training_instances(
    example: TrainingExample,
    ordered: bool = True,
    rng: np.random.Generator | None = None,
) -> list[tuple[QueryInput, Passage]]:
    """Per-hop (query, positive) pairs: hop t conditions on gold hops 1..t-1.

    With `ordered=False` the positives are permuted first (the order-agnostic
    ablation); the caller supplies the per-epoch generator.
    """
    positives = list(example.positives)
    if not ordered:
        if rng is None:
            raise ValueError("ordered=False requires an rng")
        positives = [positives[int(i)] for i in rng.permutation(len(positives))]
    return [
        (QueryInput(example.question, tuple(positives[: t - 1])), positives[t - 1])
        for t in range(1, len(positives) + 1)
    ]


class TrainInstance(NamedTuple):
    query: QueryInput
    positive: Passage
    hard_negatives: tuple[Passage, ...]


def build_instances(
    examples: Sequence[TrainingExample],
    ordered: bool = True,
    rng: np.random.Generator | None = None,
) -> list[TrainInstance]:
    out: list[TrainInstance] = []
    for example in examples:
        for query, positive in training_instances(example, ordered=ordered, rng=rng):
            out.append(TrainInstance(query, positive, example.hard_negatives))
    return out


def mine_hard_negatives(
    corpus: Corpus,
    example: TrainingExample,
    k: int,
    include_linked: bool = True,
) -> list[Passage]:
    """Top-k TF-IDF passages for the question, gold positives excluded;
    passages reachable through `meta["links"]` of those hits are appended
    (deduplicated).  May return fewer than k."""
    gold_ids = {p.id for p in example.positives}
    ranked = corpus.tfidf_scores(example.question, k + len(gold_ids))
    mined: list[Passage] = []
    for handle, _ in ranked:
        passage = corpus.lookup(handle)
        if passage.id in gold_ids:
            continue
        mined.append(passage)
        if len(mined) == k:
            break
    if include_linked:
        seen = gold_ids | {p.id for p in mined}
        for passage in list(mined):
            links = (passage.meta or {}).get("links", "")
            for linked_id in (part.strip() for part in links.split(",")):
                if linked_id and linked_id not in seen and corpus.contains_id(linked_id):
                    mined.append(corpus.lookup(corpus.handle_of(linked_id)))
                    seen.add(linked_id)
    return mined


# loss ---------------------------------------------------------------------------


@dataclass
class ContrastiveGrads:
    query: np.ndarray
    positive: np.ndarray
    negatives: list[np.ndarray]


def contrastive_loss(
    query_vec: np.ndarray,
    positive_vec: np.ndarray,
    negative_vecs: Sequence[np.ndarray],
    frozen_negative_vecs: Sequence[np.ndarray] = (),
) -> tuple[float, ContrastiveGrads]:
    """NLL of the positive under a softmax over {positive} + all negatives.

    Frozen negatives (memory-bank vectors) enter the denominator but get no
    gradient; the query gradient still includes their contribution.
    """
    q = np.asarray(query_vec, dtype=np.float64)
    p = np.asarray(positive_vec, dtype=np.float64)
    negatives = [np.asarray(n, dtype=np.float64) for n in negative_vecs]
    frozen = [np.asarray(n, dtype=np.float64) for n in frozen_negative_vecs]
    if len(negatives) + len(frozen) == 0:
        raise ValueError("at least one negative is required")
    candidates = np.vstack([p] + negatives + frozen)
    if candidates.shape[1] != q.shape[0]:
        raise ValueError(
            f"dimension mismatch: query {q.shape} vs candidates {candidates.shape}"
        )
    logits = candidates @ q
    peak = logits.max()
    exps = np.exp(logits - peak)
    total = exps.sum()
    loss = float(math.log(total) + peak - logits[0])
    probs = exps / total
    grad_query = probs @ candidates - p
    grad_positive = (probs[0] - 1.0) * q
    grad_negatives = [probs[1 + i] * q for i in range(len(negatives))]
    return loss, ContrastiveGrads(grad_query, grad_positive, grad_negatives)


# epoch-level machinery -----------------------------------------------------------


@dataclass
class EpochStats:
    mean_loss: float
    num_instances: int
    skipped: int
    denominator_sizes: list[int] = field(default_factory=list)


class AdagradState:
    """Per-parameter squared-gradient accumulators.

    Plain SGD moves the rare per-entity coordinates far too slowly here: the
    global norm clip hands almost the whole step to the dense template
    directions every batch.  Adagrad's per-coordinate scaling is the
    standard remedy for exactly this rare-feature conditioning.
    """

    def __init__(self) -> None:
        self.accumulators: dict[str, np.ndarray] = {}

    def step(self, key: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        acc = self.accumulators.setdefault(key, np.zeros_like(param))
        acc += grad * grad
        param -= lr * grad / (np.sqrt(acc) + 1e-8)


def _batch_features(model: LinearEncoder, texts: Sequence[str]) -> np.ndarray:
    return np.stack([model.features(text) for text in texts])


def _frozen_passage_rows(
    model: LinearEncoder, texts: Sequence[str], cache: dict[str, np.ndarray]
) -> np.ndarray:
    """Phase-2 passage encodings; the passage side is frozen, so rows are
    memoized by rendered text."""
    rows = []
    w_p, b_p = model.passage_side
    for text in texts:
        row = cache.get(text)
        if row is None:
            row = layer_norm(model.features(text) @ w_p.T + b_p)
            cache[text] = row
        rows.append(row)
    return np.stack(rows)


def train_epoch(
    model: LinearEncoder,
    instances: Sequence[TrainInstance],
    config: TrainConfig,
    bank: MemoryBank | None = None,
    update: bool = True,
    optimizer: AdagradState | None = None,
    frozen_passage_cache: dict[str, np.ndarray] | None = None,
) -> EpochStats:
    """One pass over `instances` in the given order.

    Negatives per instance: the other instances' positives in the batch
    (same-id copies of the own positive excluded), the instance's own hard
    negatives, and the current bank contents (frozen; the entry matching the
    instance's own positive id excluded).  Gradients are clipped at the
    global norm, then applied through Adagrad.  With `update=False` this
    only measures the loss (the held-out patience signal).
    """
    losses: list[float] = []
    denominator_sizes: list[int] = []
    skipped = 0
    passage_trainable = update and model.phase == 1
    learning_rate = config.phase2_learning_rate if model.phase == 2 else config.learning_rate
    if update and optimizer is None:
        optimizer = AdagradState()

    for start in range(0, len(instances), config.batch_size):
        batch = instances[start : start + config.batch_size]
        b = len(batch)
        query_texts = [render_query(inst.query, model.max_query_chars) for inst in batch]
        positive_ids = [inst.positive.id for inst in batch]
        passage_texts = [render_passage(inst.positive) for inst in batch]
        hard_slices: list[tuple[int, int]] = []
        for inst in batch:
            begin = len(passage_texts)
            passage_texts.extend(render_passage(p) for p in inst.hard_negatives)
            hard_slices.append((begin, len(passage_texts)))

        feats_q = _batch_features(model, query_texts)
        pre_q = feats_q @ model.query_weights.T + model.query_bias
        enc_q = layer_norm(pre_q)
        if model.phase == 2 and frozen_passage_cache is not None:
            feats_p = pre_p = None
            enc_p = _frozen_passage_rows(model, passage_texts, frozen_passage_cache)
        else:
            w_p, b_p = model.passage_side
            feats_p = _batch_features(model, passage_texts)
            pre_p = feats_p @ w_p.T + b_p
            enc_p = layer_norm(pre_p)

        if bank is not None:
            bank_matrix, bank_id_list = bank.snapshot()
            bank_ids = np.asarray(bank_id_list) if bank_id_list else None
        else:
            bank_matrix = bank_ids = None
        pos_logits = enc_q @ enc_p[:b].T
        hard_logits = enc_q @ enc_p[b:].T if len(passage_texts) > b else None
        bank_logits = enc_q @ bank_matrix.T if bank_matrix is not None else None

        grad_q = np.zeros_like(enc_q)
        prob_pos = np.zeros((b, b))
        prob_hard = np.zeros((b, len(passage_texts) - b)) if hard_logits is not None else None
        batch_counted = 0

        for i in range(b):
            other = [j for j in range(b) if j != i and positive_ids[j] != positive_ids[i]]
            h_begin, h_end = hard_slices[i]
            bank_mask = bank_ids != positive_ids[i] if bank_ids is not None else None
            parts = [np.array([pos_logits[i, i]])]
            if other:
                parts.append(pos_logits[i, other])
            if h_end > h_begin:
                parts.append(hard_logits[i, h_begin - b : h_end - b])
            if bank_mask is not None:
                parts.append(bank_logits[i, bank_mask])
            logits = np.concatenate(parts)
            denominator_sizes.append(len(logits))
            if len(logits) < 2:
                skipped += 1
                continue
            peak = logits.max()
            exps = np.exp(logits - peak)
            total = exps.sum()
            loss = math.log(total) + peak - logits[0]
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at instance {start + i} "
                    f"(question {batch[i].query.question!r}); aborting"
                )
            losses.append(loss)
            batch_counted += 1
            if not update:
                continue
            probs = exps / total
            prob_pos[i, i] = probs[0]
            cursor = 1
            if other:
                prob_pos[i, other] = probs[cursor : cursor + len(other)]
                cursor += len(other)
            if h_end > h_begin:
                prob_hard[i, h_begin - b : h_end - b] = probs[cursor : cursor + (h_end - h_begin)]
                cursor += h_end - h_begin
            grad_q[i] = prob_pos[i] @ enc_p[:b] - enc_p[i]
            if h_end > h_begin:
                grad_q[i] += prob_hard[i] @ enc_p[b:]
            if bank_mask is not None:
                grad_q[i] += probs[cursor:] @ bank_matrix[bank_mask]

        if update and batch_counted:
            scale = 1.0 / batch_counted
            grad_q *= scale
            d_wq, d_bq = linear_embed_backward(feats_q, pre_q, grad_q)
            grads = [d_wq, d_bq]
            params = [("query_weights", model.query_weights), ("query_bias", model.query_bias)]
            if passage_trainable:
                grad_p = np.zeros_like(enc_p)
                grad_p[:b] = prob_pos.T @ enc_q - enc_q
                if prob_hard is not None:
                    grad_p[b:] = prob_hard.T @ enc_q
                grad_p *= scale
                d_wp, d_bp = linear_embed_backward(feats_p, pre_p, grad_p)
                if model.shared and model.passage_weights is None:
                    grads[0] = grads[0] + d_wp
                    grads[1] = grads[1] + d_bp
                else:
                    grads += [d_wp, d_bp]
                    params += [
                        ("passage_weights", model.passage_weights),
                        ("passage_bias", model.passage_bias),
                    ]
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > config.gradient_clip_norm > 0:
                clip = config.gradient_clip_norm / norm
                grads = [g * clip for g in grads]
            for (key, param), grad in zip(params, grads):
                optimizer.step(key, param, grad, learning_rate)

        if bank is not None and update and model.phase == 2:
            for pid, vector in zip(positive_ids, enc_p[:b]):
                bank.push(vector, pid)
            for inst, (h_begin, h_end) in zip(batch, hard_slices):
                for offset, passage in enumerate(inst.hard_negatives):
                    bank.push(enc_p[h_begin + offset], passage.id)

    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return EpochStats(
        mean_loss=mean_loss,
        num_instances=len(instances),
        skipped=skipped,
        denominator_sizes=denominator_sizes,
    )


# retrieval-quality evaluation ----------------------------------------------------


def corpus_feature_matrix(model: LinearEncoder, corpus: Corpus) -> np.ndarray:
    """Hashed features of every passage; weight-independent, cache per run."""
    return np.stack([model.features(render_passage(p)) for p in corpus])


def encode_corpus(model: LinearEncoder, corpus: Corpus, features: np.ndarray | None = None) -> np.ndarray:
    if features is None:
        features = corpus_feature_matrix(model, corpus)
    w_p, b_p = model.passage_side
    return layer_norm(features @ w_p.T + b_p)


def evaluate_retrieval_recall(
    model: LinearEncoder,
    corpus: Corpus,
    examples: Sequence[TrainingExample],
    beam_width: int = 5,
    corpus_features: np.ndarray | None = None,
) -> float:
    """Fraction of examples whose top-1 chain covers every gold passage
    (recall at k = hops, i.e. R@2 for two-hop data)."""
    vectors = encode_corpus(model, corpus, corpus_features)
    flat = FlatIndex.build(vectors, ids=corpus.ids)
    hits = 0
    for example in examples:
        gold = {p.id for p in example.positives}
        config = BeamConfig(
            hops=len(example.positives),
            beam_width=beam_width,
            k_out=1,
            candidates_per_hop=beam_width,
        )
        chains = retrieve(example.question, corpus, flat, model, config)
        predicted = {corpus.lookup(h).id for h in chains[0].passages} if chains else set()
        hits += int(gold <= predicted)
    return hits / len(examples)


# two-phase driver ----------------------------------------------------------------


@dataclass
class TrainResult:
    model: LinearEncoder
    log: dict


def _prepare(examples: Iterable[TrainingExample], config: TrainConfig) -> list[TrainingExample]:
    prepared = []
    for example in examples:
        if not config.use_hard_negatives and example.hard_negatives:
            example = replace(example, hard_negatives=())
        if config.ordered and len(example.positives) == 2 and example.answer:
            example = order_positives(example)
        prepared.append(example)
    return prepared


def train(
    dataset: Sequence[TrainingExample],
    config: TrainConfig = TrainConfig(),
    *,
    corpus: Corpus,
    dev: Sequence[TrainingExample] | None = None,
) -> TrainResult:
    """Full training run: phase 1 (shared encoder, patience on held-out loss),
    then phase 2 with the frozen passage encoder and memory bank when
    enabled.  Returns the checkpoint with the best held-out chain recall,
    weights rounded through float32 so the artifact equals its on-disk form.
    """
    if not dataset:
        raise TrainingError("empty dataset")
    train_examples = list(dataset)
    if dev is None:
        order = np.random.default_rng(np.random.SeedSequence((config.seed, 0xDE))).permutation(
            len(train_examples)
        )
        n_dev = max(1, round(config.dev_fraction * len(train_examples)))
        if n_dev >= len(train_examples):
            raise TrainingError("dataset too small to split off a dev set")
        dev = [train_examples[int(i)] for i in order[:n_dev]]
        train_examples = [train_examples[int(i)] for i in order[n_dev:]]

    train_examples = _prepare(train_examples, config)
    dev_examples = _prepare(list(dev), replace(config, ordered=True))

    model = LinearEncoder(config.dimension, shared=config.shared_encoder)
    model.feature_cache = {}
    corpus_features = corpus_feature_matrix(model, corpus)
    dev_instances = build_instances(dev_examples, ordered=True)

    epoch_log: list[dict] = []
    best_recall = -1.0
    best_snapshot = model.copy()
    best_at = (1, 0)
    phase = 1
    bank: MemoryBank | None = None
    optimizer = AdagradState()
    frozen_cache: dict[str, np.ndarray] | None = None
    phase_best_loss = math.inf
    phase_best_model = model.copy()
    stale = 0
    phase_epochs = 0
    epoch = 0

    while epoch < config.epochs:
        epoch += 1
        phase_epochs += 1
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, epoch)))
        instances = build_instances(train_examples, ordered=config.ordered, rng=rng)
        instances = [instances[int(i)] for i in rng.permutation(len(instances))]
        stats = train_epoch(
            model, instances, config, bank=bank,
            optimizer=optimizer, frozen_passage_cache=frozen_cache,
        )
        dev_stats = train_epoch(
            model, dev_instances, config, bank=None, update=False,
            frozen_passage_cache=frozen_cache,
        )
        recall = evaluate_retrieval_recall(
            model, corpus, dev_examples[: config.eval_sample],
            config.eval_beam_width, corpus_features,
        )
        epoch_log.append(
            {
                "epoch": epoch,
                "phase": phase,
                "train_loss": stats.mean_loss,
                "dev_loss": dev_stats.mean_loss,
                "dev_recall": recall,
                "bank_size": len(bank) if bank is not None else 0,
            }
        )
        if recall > best_recall:
            best_recall = recall
            best_snapshot = model.copy()
            best_at = (phase, epoch)
        if dev_stats.mean_loss < phase_best_loss:
            phase_best_loss = dev_stats.mean_loss
            phase_best_model = model.copy()
            stale = 0
        else:
            stale += 1
        phase1_done = phase == 1 and (
            stale >= config.patience
            or (config.use_memory_bank and phase_epochs >= config.phase1_max_epochs)
        )
        if phase1_done and config.use_memory_bank and epoch < config.epochs:
            # Freeze from the best-retrieval checkpoint: the held-out loss can
            # keep inching down after retrieval quality has peaked.
            model = best_snapshot.copy()
            model.feature_cache = {}
            model.freeze_passage_side()
            bank = MemoryBank(config.bank_capacity)
            frozen_cache = {}
            optimizer = AdagradState()
            phase = 2
            phase_best_loss = math.inf
            phase_best_model = model.copy()
            stale = 0
            phase_epochs = 0
        elif stale >= config.patience:
            break

    final = best_snapshot
    final.quantize()
    final.feature_cache = {}
    final_recall = evaluate_retrieval_recall(
        final, corpus, dev_examples, config.eval_beam_width,
        corpus_feature_matrix(final, corpus),
    )
    final.feature_cache = None
    log = {
        "config": {
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "epochs": config.epochs,
            "seed": config.seed,
            "dimension": config.dimension,
            "shared_encoder": config.shared_encoder,
            "use_memory_bank": config.use_memory_bank,
            "use_hard_negatives": config.use_hard_negatives,
            "ordered": config.ordered,
            "gradient_clip_norm": config.gradient_clip_norm,
            "bank_capacity": config.bank_capacity,
        },
        "epochs": epoch_log,
        "selected": {"phase": best_at[0], "epoch": best_at[1]},
        "phase": final.phase,
        "final_dev_recall": final_recall,
        "num_train_examples": len(train_examples),
        "num_dev_examples": len(dev_examples),
    }
    return TrainResult(model=final, log=log)


# model persistence ----------------------------------------------------------------


def save_model(model: LinearEncoder, path: str | Path) -> None:
    """Serialize a linear embedder; written atomically (temp file + rename)."""
    path = Path(path)
    buf = bytearray()
    buf += MODEL_MAGIC
    buf += struct.pack("<I", MODEL_FORMAT_VERSION)
    buf += struct.pack("<I", model.dimension)
    buf += struct.pack("<B", 1 if model.shared else 0)
    buf += struct.pack("<B", model.phase)
    buf += np.ascontiguousarray(model.query_weights, dtype="<f4").tobytes()
    buf += np.ascontiguousarray(model.query_bias, dtype="<f4").tobytes()
    second = (not model.shared) or model.phase == 2
    if second:
        if model.passage_weights is None:
            raise ModelFormatError("split/frozen model is missing its passage side")
        buf += np.ascontiguousarray(model.passage_weights, dtype="<f4").tobytes()
        buf += np.ascontiguousarray(model.passage_bias, dtype="<f4").tobytes()
    buf += struct.pack("<Q", fnv1a64(bytes(buf)))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(buf))
    os.replace(tmp, path)


def load_model(path: str | Path) -> LinearEncoder:
    data = Path(path).read_bytes()
    if len(data) < len(MODEL_MAGIC) + 8:
        raise ModelFormatError("truncated model file")
    if data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {data[:8]!r}")
    (checksum,) = struct.unpack("<Q", data[-8:])
    if fnv1a64(data[:-8]) != checksum:
        raise ModelFormatError("checksum mismatch")
    body = data[:-8]
    pos = len(MODEL_MAGIC)
    version, dimension = struct.unpack_from("<II", body, pos)
    pos += 8
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    shared, phase = struct.unpack_from("<BB", body, pos)
    pos += 2

    def matrix(rows: int) -> np.ndarray:
        nonlocal pos
        n = rows * dimension * 4
        if pos + n > len(body):
            raise ModelFormatError("truncated model file")
        out = np.frombuffer(body, dtype="<f4", count=rows * dimension, offset=pos)
        pos += n
        return out.astype(np.float64).reshape(rows, dimension)

    query_weights = matrix(dimension)
    query_bias = matrix(1)[0]
    passage_weights = passage_bias = None
    if (not shared) or phase == 2:
        passage_weights = matrix(dimension)
        passage_bias = matrix(1)[0]
    if pos != len(body):
        raise ModelFormatError("trailing bytes in model file")
    return LinearEncoder(
        dimension=dimension,
        query_weights=query_weights,
        query_bias=query_bias,
        passage_weights=passage_weights,
        passage_bias=passage_bias,
        shared=bool(shared),
        phase=int(phase),
        hash_seed=MODEL_HASH_SEED,
    )


# training-data files ---------------------------------------------------------------


def example_from_dict(obj: dict, *, where: str = "") -> TrainingExample:
    ctx = f" ({where})" if where else ""
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"training example must be a JSON object{ctx}")
    for key in ("question", "answer", "positives"):
        if key not in obj:
            raise CorpusFormatError(f"training example missing key {key!r}{ctx}")
    positives = tuple(
        passage_from_dict(p, where=where) for p in obj["positives"]
    )
    hard = tuple(
        passage_from_dict(p, where=where) for p in obj.get("hard_negatives", [])
    )
    try:
        return TrainingExample(
            question=obj["question"],
            answer=obj["answer"],
            positives=positives,
            hard_negatives=hard,
            qtype=obj.get("type"),
        )
    except ValueError as exc:
        raise CorpusFormatError(f"{exc}{ctx}") from exc


def example_to_dict(example: TrainingExample) -> dict:
    def passage_dict(p: Passage) -> dict:
        out = {"id": p.id, "title": p.title, "text": p.text}
        if p.meta:
            out["meta"] = p.meta
        return out

    out = {
        "question": example.question,
        "answer": example.answer,
        "positives": [passage_dict(p) for p in example.positives],
    }
    if example.hard_negatives:
        out["hard_negatives"] = [passage_dict(p) for p in example.hard_negatives]
    if example.qtype:
        out["type"] = example.qtype
    return out


def load_training_data(path: str | Path) -> list[TrainingExample]:
    path = Path(path)
    examples: list[TrainingExample] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            examples.append(example_from_dict(obj, where=f"{path}, line {lineno}"))
    if not examples:
        raise CorpusFormatError(f"{path}: no training examples")
    return examples
