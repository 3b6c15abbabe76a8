"""Retrieval metrics and the latency benchmark.

Metric functions operate on chains expressed as passage-id sequences so the
tests can drive them with hand-built fixtures.  `run_eval` glues retrieval
and metrics together and produces a MetricsReport.

Recall@k follows the chain interpretation: the gold set must be covered by
the union of the top floor(k / hops) chains (for two-hop chains, R@2 looks
at the top chain only, which makes dataset-level SP EM and R@2 coincide by
construction).
"""

from __future__ import annotations

import json
import re
import string
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, CorpusFormatError
from .encoders import QueryInput
from .retriever import BeamConfig, Chain, ChainScorer, rerank, retrieve

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class EvalRecord:
    """One evaluation question with its unordered gold passage-id set."""

    question: str
    answer: str
    gold_ids: frozenset[str]
    qtype: str | None = None

    def __post_init__(self) -> None:
        if not self.gold_ids:
            raise ValueError("gold_ids must be non-empty")
        object.__setattr__(self, "gold_ids", frozenset(self.gold_ids))


def normalize_answer(text: str) -> str:
    """Standard QA normalization: lowercase, drop punctuation and articles,
    collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def recall_at_k(chain_ids: Sequence[Sequence[str]], gold: set[str] | frozenset[str], k: int) -> int:
    """1 iff the union of the top floor(k/hops) chains covers every gold id."""
    hops = max((len(ids) for ids in chain_ids), default=1)
    if k < hops:
        raise ValueError(f"k ({k}) must be >= chain length ({hops})")
    top = chain_ids[: k // hops]
    union: set[str] = set()
    for ids in top:
        union.update(ids)
    return int(set(gold) <= union)


def sp_em(top_chain_ids: Sequence[str], gold: set[str] | frozenset[str]) -> int:
    """1 iff the top chain's passage set equals the gold set (order-free)."""
    return int(set(top_chain_ids) == set(gold))


def answer_recall(
    chain_texts: Sequence[Sequence[str]], answer: str, k_chains: int
) -> int:
    """1 iff the normalized answer occurs in any passage text of the top
    `k_chains` chains (both sides normalized)."""
    if not answer:
        raise ValueError("answer must be non-empty")
    needle = normalize_answer(answer)
    for texts in chain_texts[:k_chains]:
        for text in texts:
            if needle and needle in normalize_answer(text):
                return 1
    return 0


def precision_recall_f1(
    chain_ids: Sequence[Sequence[str]], gold: set[str] | frozenset[str], k_chains: int
) -> tuple[float, float, float]:
    """Set precision/recall/F1 over the union of the top `k_chains` chains."""
    retrieved: set[str] = set()
    for ids in chain_ids[:k_chains]:
        retrieved.update(ids)
    if not retrieved or not gold:
        return 0.0, 0.0, 0.0
    overlap = len(retrieved & set(gold))
    precision = overlap / len(retrieved)
    recall = overlap / len(gold)
    f1 = 2 * precision * recall / (precision + recall) if precision > 0 and recall > 0 else 0.0
    return precision, recall, f1


@dataclass
class MetricsReport:
    """Dataset-level metrics plus the raw per-question indicators."""

    num_questions: int
    recall_at: dict[int, float]
    sp_em: float
    answer_recall: float
    precision: float
    recall: float
    f1: float
    per_type: dict[str, dict[str, float]] = field(default_factory=dict)
    latency: dict[str, float] | None = None
    per_question: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "num_questions": self.num_questions,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "sp_em": self.sp_em,
            "answer_recall": self.answer_recall,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_type": self.per_type,
            "latency": self.latency,
            "per_question": self.per_question,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    def recall_csv_rows(self) -> list[tuple[int, float]]:
        return sorted(self.recall_at.items())


def evaluate_questions(
    records: Sequence[EvalRecord],
    chains_per_question: Sequence[Sequence[Chain]],
    corpus: Corpus,
    k_list: Sequence[int],
    warn: Callable[[str], None] | None = None,
) -> MetricsReport:
    """Compute all metrics given already-retrieved chains per question.

    Questions whose gold ids are missing from the corpus count with
    indicator 0 (a warning is emitted per question).
    """
    if len(records) != len(chains_per_question):
        raise ValueError("one chain list per record required")
    k_list = sorted(set(k_list))
    per_question: list[dict] = []
    for record, chains in zip(records, chains_per_question):
        ids = [[corpus.lookup(h).id for h in chain.passages] for chain in chains]
        texts = [[corpus.lookup(h).text for h in chain.passages] for chain in chains]
        missing = [g for g in record.gold_ids if not corpus.contains_id(g)]
        if missing and warn is not None:
            warn(f"question {record.question!r}: gold ids not in corpus: {missing}")
        entry: dict = {"question": record.question, "type": record.qtype}
        entry["recall_at"] = {
            str(k): recall_at_k(ids, record.gold_ids, k) if ids else 0 for k in k_list
        }
        entry["sp_em"] = sp_em(ids[0], record.gold_ids) if ids else 0
        entry["answer_recall"] = answer_recall(texts, record.answer, 1) if ids else 0
        p, r, f1 = precision_recall_f1(ids, record.gold_ids, 1) if ids else (0.0, 0.0, 0.0)
        entry["precision"], entry["recall"], entry["f1"] = p, r, f1
        per_question.append(entry)

    def mean(key: str, rows: list[dict]) -> float:
        return sum(row[key] for row in rows) / len(rows) if rows else 0.0

    per_type: dict[str, dict[str, float]] = {}
    for qtype in sorted({row["type"] for row in per_question if row["type"]}):
        rows = [row for row in per_question if row["type"] == qtype]
        per_type[qtype] = {
            "num_questions": len(rows),
            "sp_em": mean("sp_em", rows),
            "answer_recall": mean("answer_recall", rows),
        }
    return MetricsReport(
        num_questions=len(records),
        recall_at={
            k: sum(row["recall_at"][str(k)] for row in per_question) / len(per_question)
            for k in k_list
        }
        if per_question
        else {},
        sp_em=mean("sp_em", per_question),
        answer_recall=mean("answer_recall", per_question),
        precision=mean("precision", per_question),
        recall=mean("recall", per_question),
        f1=mean("f1", per_question),
        per_type=per_type,
        per_question=per_question,
    )


def run_eval(
    records: Sequence[EvalRecord],
    corpus: Corpus,
    index,
    encoder,
    config: BeamConfig,
    k_list: Sequence[int],
    scorer: ChainScorer | None = None,
    warn: Callable[[str], None] | None = None,
) -> MetricsReport:
    """Retrieve chains for each record (optionally rerank) and score them."""
    chains_per_question: list[list[Chain]] = []
    for record in records:
        chains = retrieve(record.question, corpus, index, encoder, config)
        if scorer is not None and chains:
            chains = rerank(chains, scorer, record.question, corpus)
        chains_per_question.append(chains)
    return evaluate_questions(records, chains_per_question, corpus, k_list, warn=warn)


# latency benchmark -------------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    k: int
    metric: str  # mean | p50 | p95
    sec_per_query: float
    encoder_sec: float
    index_sec: float


BENCH_CSV_HEADER = "k,metric,sec_per_query,encoder_sec,index_sec"


def bench_latency(index, encoder, queries: Sequence[str], k_list: Sequence[int]) -> list[BenchRow]:
    """Single-query (batch size 1) wall-clock timing, one sweep per k.

    Encoder time and index time are measured separately; rows report mean,
    p50, and p95 seconds per query over the query set.
    """
    if not queries:
        raise ValueError("query set must be non-empty")
    rows: list[BenchRow] = []
    for k in k_list:
        encoder_times: list[float] = []
        index_times: list[float] = []
        for question in queries:
            t0 = time.perf_counter()
            vector = encoder.encode_query(QueryInput(question))
            t1 = time.perf_counter()
            index.search(vector, k)
            t2 = time.perf_counter()
            encoder_times.append(t1 - t0)
            index_times.append(t2 - t1)
        enc = np.array(encoder_times)
        idx = np.array(index_times)
        total = enc + idx
        for metric, fn in (
            ("mean", np.mean),
            ("p50", lambda a: np.percentile(a, 50)),
            ("p95", lambda a: np.percentile(a, 95)),
        ):
            rows.append(
                BenchRow(
                    k=k,
                    metric=metric,
                    sec_per_query=float(fn(total)),
                    encoder_sec=float(fn(enc)),
                    index_sec=float(fn(idx)),
                )
            )
    return rows


def bench_rows_to_csv(rows: Sequence[BenchRow]) -> str:
    lines = [BENCH_CSV_HEADER]
    for row in rows:
        lines.append(
            f"{row.k},{row.metric},{row.sec_per_query:.9f},{row.encoder_sec:.9f},{row.index_sec:.9f}"
        )
    return "\n".join(lines) + "\n"


# eval-data files -----------------------------------------------------------------


def load_eval_records(path) -> list[EvalRecord]:
    """Eval JSONL: {"question", "answer", "gold_ids": [...], "type"?}."""
    from pathlib import Path

    path = Path(path)
    records: list[EvalRecord] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            try:
                records.append(
                    EvalRecord(
                        question=obj["question"],
                        answer=obj["answer"],
                        gold_ids=frozenset(obj["gold_ids"]),
                        qtype=obj.get("type"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(f"{path}, line {lineno}: {exc}") from exc
    if not records:
        raise CorpusFormatError(f"{path}: no evaluation records")
    return records
