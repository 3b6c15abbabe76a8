"""Multi-hop beam-search inference over a passage index.

Hop 1 seeds beams from a MIPS query for the bare question; every later hop
re-encodes (question + passages retrieved so far) and expands each beam
with its top MIPS candidates, skipping passages already in the beam.  Beams
are scored by the running sum of per-hop inner products and pruned to the
beam width after every hop; ties always break on the lexicographic order of
passage ordinals, so identical inputs produce identical chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

import numpy as np
import requests

from .corpus import Corpus
from .encoders import QueryInput
from .textproc import tokenize
from .vecmath import dot


@dataclass(frozen=True)
class Chain:
    """An ordered passage sequence with per-hop inner-product scores.

    `total_score` is exactly the left-to-right sum of `hop_scores`; a chain
    never repeats a passage.
    """

    passages: tuple[int, ...]
    hop_scores: tuple[float, ...]
    total_score: float
    rerank_score: float | None = None
    rerank_failed: bool = False

    def __post_init__(self) -> None:
        if len(self.passages) != len(self.hop_scores):
            raise ValueError("one hop score per passage required")
        if len(set(self.passages)) != len(self.passages):
            raise ValueError(f"chain repeats a passage: {self.passages}")
        total = 0.0
        for score in self.hop_scores:
            total += score
        if total != self.total_score:
            raise ValueError(
                f"total_score {self.total_score!r} != left-to-right sum {total!r}"
            )


def make_chain(passages: Sequence[int], hop_scores: Sequence[float]) -> Chain:
    total = 0.0
    for score in hop_scores:
        total += score
    return Chain(tuple(passages), tuple(float(s) for s in hop_scores), total)


@dataclass(frozen=True)
class BeamConfig:
    """Beam-search knobs.  `candidates_per_hop` defaults to the beam width."""

    hops: int = 2
    beam_width: int = 8
    k_out: int = 8
    candidates_per_hop: int | None = None
    adaptive_stop: bool = False
    stop_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.hops < 1:
            raise ValueError(f"hops must be >= 1, got {self.hops}")
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.k_out < 1:
            raise ValueError(f"k_out must be >= 1, got {self.k_out}")
        if self.k_out > self.beam_width**self.hops:
            raise ValueError(
                f"k_out {self.k_out} exceeds achievable chains "
                f"(beam_width ** hops = {self.beam_width ** self.hops})"
            )
        if self.candidates_per_hop is not None and self.candidates_per_hop < 1:
            raise ValueError("candidates_per_hop must be >= 1")
        if not 0.0 <= self.stop_threshold <= 1.0:
            raise ValueError(f"stop_threshold must be in [0, 1], got {self.stop_threshold}")

    @property
    def expansion_k(self) -> int:
        return self.candidates_per_hop if self.candidates_per_hop is not None else self.beam_width


@dataclass(frozen=True)
class StopPredictor:
    """Logistic head over the next-hop query vector (adaptive stopping)."""

    weights: np.ndarray
    bias: float = 0.0


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def predict_stop(predictor: StopPredictor, query_vector: np.ndarray) -> float:
    """P(stop) = sigmoid(<weights, query_vector> + bias)."""
    weights = np.asarray(predictor.weights, dtype=np.float64)
    query_vector = np.asarray(query_vector, dtype=np.float64)
    if weights.shape != query_vector.shape:
        raise ValueError(
            f"dimension mismatch: weights {weights.shape} vs vector {query_vector.shape}"
        )
    return _sigmoid(dot(weights, query_vector) + predictor.bias)


@dataclass(frozen=True)
class _Beam:
    passages: tuple[int, ...]
    hop_scores: tuple[float, ...]
    total: float
    frozen: bool = False


def retrieve(
    question: str,
    corpus: Corpus,
    index,
    encoder,
    config: BeamConfig = BeamConfig(),
    stop_predictor: StopPredictor | None = None,
) -> list[Chain]:
    """Top `config.k_out` passage chains for `question`, best first.

    The index must have been built over `corpus` with `encoder`.  With
    adaptive stopping enabled, a beam whose stop probability reaches the
    threshold is frozen at its current length and keeps competing with its
    current total score.
    """
    if len(corpus) == 0:
        raise ValueError("cannot retrieve from an empty corpus")
    if config.adaptive_stop and stop_predictor is None:
        raise ValueError("adaptive_stop requires a stop_predictor")

    seed_k = config.beam_width if config.hops > 1 else max(config.beam_width, config.k_out)
    first = encoder.encode_query(QueryInput(question))
    beams = [
        _Beam(passages=(handle,), hop_scores=(score,), total=score)
        for handle, score in index.search(first, min(seed_k, len(corpus)))
    ]

    for hop in range(2, config.hops + 1):
        expanded: list[_Beam] = []
        for beam in beams:
            if beam.frozen:
                expanded.append(beam)
                continue
            prior = tuple(corpus.lookup(h) for h in beam.passages)
            query_vec = encoder.encode_query(QueryInput(question, prior))
            if config.adaptive_stop and (
                predict_stop(stop_predictor, query_vec) >= config.stop_threshold
            ):
                expanded.append(replace(beam, frozen=True))
                continue
            grew = False
            for handle, score in index.search(query_vec, config.expansion_k):
                if handle in beam.passages:
                    continue
                expanded.append(
                    _Beam(
                        passages=beam.passages + (handle,),
                        hop_scores=beam.hop_scores + (score,),
                        total=beam.total + score,
                    )
                )
                grew = True
            if not grew:  # every candidate already in the beam: corpus exhausted
                expanded.append(replace(beam, frozen=True))
        expanded.sort(key=lambda b: (-b.total, b.passages))
        # Width pruning applies between hops; the final hop's expansions are
        # only cut to k_out below, so k_out may exceed the beam width.
        beams = expanded[: config.beam_width] if hop < config.hops else expanded

    beams = sorted(beams, key=lambda b: (-b.total, b.passages))[: config.k_out]
    return [Chain(b.passages, b.hop_scores, b.total) for b in beams]


# chain scoring ---------------------------------------------------------------


class ChainScorer(Protocol):
    """Plug-in contract: (question, ordered passage texts) -> one finite real."""

    def __call__(self, question: str, passage_texts: Sequence[str]) -> float: ...


def lexical_chain_score(question: str, chain: Chain, corpus: Corpus) -> float:
    """Fraction of distinct question tokens found in the chain's passage text."""
    texts = [corpus.lookup(h).text for h in chain.passages]
    return lexical_score(question, texts)


def lexical_score(question: str, passage_texts: Sequence[str]) -> float:
    """ChainScorer-shaped lexical baseline (case-insensitive token coverage)."""
    question_tokens = set(tokenize(question))
    if not question_tokens:
        return 0.0
    text_tokens = set(tokenize(" ".join(passage_texts)))
    return len(question_tokens & text_tokens) / len(question_tokens)


class RemoteChainScorer:
    """Client for the remote scorer protocol: POST /score
    {"question": str, "chains": [[str, ...], ...]} -> {"scores": [float, ...]}.

    Called once per chain so that a failing chain can sink individually.
    """

    def __init__(self, url: str, timeout: float = 30.0, session: requests.Session | None = None):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()

    def __call__(self, question: str, passage_texts: Sequence[str]) -> float:
        response = self._session.post(
            f"{self.url}/score",
            json={"question": question, "chains": [list(passage_texts)]},
            timeout=self.timeout,
        )
        response.raise_for_status()
        scores = response.json()["scores"]
        return float(scores[0])


def rerank(
    chains: Sequence[Chain],
    scorer: ChainScorer,
    question: str,
    corpus: Corpus,
) -> list[Chain]:
    """Re-sort chains by scorer output, descending; stable on ties.

    The retriever's total_score is retained on every chain.  Chains whose
    scorer call fails (or returns a non-finite value) sink to the end in
    their original order, flagged with `rerank_failed`.
    """
    if not chains:
        raise ValueError("rerank requires at least one chain")
    scored: list[Chain] = []
    failed: list[Chain] = []
    for chain in chains:
        texts = [corpus.lookup(h).text for h in chain.passages]
        try:
            score = float(scorer(question, texts))
            if not math.isfinite(score):
                raise ValueError(f"scorer returned non-finite value {score!r}")
        except Exception:
            failed.append(replace(chain, rerank_score=None, rerank_failed=True))
            continue
        scored.append(replace(chain, rerank_score=score, rerank_failed=False))
    scored.sort(key=lambda c: -c.rerank_score)  # stable: ties keep retriever order
    return scored + failed
