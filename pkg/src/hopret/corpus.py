"""Passage corpus: JSONL ingestion, dense integer handles, TF-IDF scoring.

A corpus is immutable after load; handles are 0-based ordinals assigned in
file order and are bijective with passage ids.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from .textproc import tokenize


class CorpusFormatError(ValueError):
    """Raised for malformed corpus files (bad JSON, duplicate ids, ...)."""


@dataclass(frozen=True)
class Passage:
    """One retrieval unit: an identified, titled chunk of corpus text."""

    id: str
    title: str
    text: str
    meta: dict[str, str] | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("passage id must be non-empty")
        if not self.text:
            raise ValueError(f"passage {self.id!r}: text must be non-empty")


def passage_from_dict(obj: dict, *, where: str = "") -> Passage:
    """Build a Passage from a decoded JSON object, validating field types."""
    ctx = f" ({where})" if where else ""
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"passage must be a JSON object{ctx}")
    for key in ("id", "title", "text"):
        if key not in obj:
            raise CorpusFormatError(f"passage missing required key {key!r}{ctx}")
        if not isinstance(obj[key], str):
            raise CorpusFormatError(f"passage key {key!r} must be a string{ctx}")
    meta = obj.get("meta")
    if meta is not None:
        if not isinstance(meta, dict) or any(
            not isinstance(k, str) or not isinstance(v, str) for k, v in meta.items()
        ):
            raise CorpusFormatError(f"passage 'meta' must map strings to strings{ctx}")
    try:
        return Passage(id=obj["id"], title=obj["title"], text=obj["text"], meta=meta)
    except ValueError as exc:
        raise CorpusFormatError(f"{exc}{ctx}") from exc


@dataclass
class _TfidfModel:
    """Inverted index with log-TF, smoothed IDF, cosine-normalized doc vectors."""

    postings: dict[str, list[tuple[int, float]]]
    idf: dict[str, float]
    num_docs: int


class Corpus:
    """Immutable passage collection with dense 0-based handles in load order."""

    def __init__(self, passages: Sequence[Passage]):
        self._passages: tuple[Passage, ...] = tuple(passages)
        handle_by_id: dict[str, int] = {}
        for ordinal, passage in enumerate(self._passages):
            if passage.id in handle_by_id:
                raise CorpusFormatError(
                    f"duplicate passage id {passage.id!r} at position {ordinal}"
                )
            handle_by_id[passage.id] = ordinal
        self._handle_by_id = handle_by_id
        self._tfidf: _TfidfModel | None = None

    def __len__(self) -> int:
        return len(self._passages)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self._passages)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self._passages)

    def lookup(self, handle: int) -> Passage:
        """Passage for a handle; raises IndexError on out-of-range handles."""
        if not 0 <= handle < len(self._passages):
            raise IndexError(
                f"handle {handle} out of range for corpus of size {len(self._passages)}"
            )
        return self._passages[handle]

    def handle_of(self, passage_id: str) -> int:
        """Ordinal handle of a passage id; raises KeyError if unknown."""
        return self._handle_by_id[passage_id]

    def contains_id(self, passage_id: str) -> bool:
        return passage_id in self._handle_by_id

    # TF-IDF ---------------------------------------------------------------

    def _tfidf_model(self) -> _TfidfModel:
        """Build (once) the TF-IDF index over title + text of every passage."""
        if self._tfidf is None:
            n = len(self._passages)
            doc_counts: list[Counter[str]] = []
            df: Counter[str] = Counter()
            for passage in self._passages:
                counts = Counter(tokenize(passage.title) + tokenize(passage.text))
                doc_counts.append(counts)
                df.update(counts.keys())
            idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in df.items()}
            postings: dict[str, list[tuple[int, float]]] = {}
            for ordinal, counts in enumerate(doc_counts):
                weights = {t: (1.0 + math.log(c)) * idf[t] for t, c in counts.items()}
                norm = math.sqrt(sum(w * w for w in weights.values()))
                for t, w in weights.items():
                    postings.setdefault(t, []).append((ordinal, w / norm))
            self._tfidf = _TfidfModel(postings=postings, idf=idf, num_docs=n)
        return self._tfidf

    def tfidf_scores(self, query_text: str, k: int) -> list[tuple[int, float]]:
        """Top-k passages by TF-IDF cosine, descending, ties by ascending handle.

        Passages with zero score are dropped, so fewer than k results may
        come back.
        """
        if k <= 0:
            raise ValueError(f"k must be positive, got {k}")
        model = self._tfidf_model()
        q_counts = Counter(tokenize(query_text))
        if not q_counts:
            return []
        q_weights = {
            t: (1.0 + math.log(c)) * model.idf.get(t, math.log(1 + model.num_docs) + 1.0)
            for t, c in q_counts.items()
        }
        q_norm = math.sqrt(sum(w * w for w in q_weights.values()))
        scores: dict[int, float] = {}
        # Accumulate in sorted-term order so float summation is reproducible.
        for term in sorted(q_weights):
            postings = model.postings.get(term)
            if not postings:
                continue
            qw = q_weights[term] / q_norm
            for ordinal, dw in postings:
                scores[ordinal] = scores.get(ordinal, 0.0) + qw * dw
        ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
        return [(ordinal, score) for ordinal, score in ranked[:k] if score > 0.0]


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSONL corpus file (one passage object per line).

    Blank lines are ignored.  Errors report the offending 1-based line
    number; duplicate ids name both the id and the line.
    """
    path = Path(path)
    passages: list[Passage] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            passage = passage_from_dict(obj, where=f"{path}, line {lineno}")
            if passage.id in seen:
                raise CorpusFormatError(
                    f"{path}: duplicate passage id {passage.id!r} on line {lineno} "
                    f"(first seen on line {seen[passage.id]})"
                )
            seen[passage.id] = lineno
            passages.append(passage)
    if not passages:
        raise CorpusFormatError(f"{path}: corpus file contains no passages")
    return Corpus(passages)
