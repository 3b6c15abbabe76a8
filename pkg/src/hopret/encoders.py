"""Dense encoders and query reformulation.

Queries are reformulated by plain concatenation: the question followed by
the title and text of every previously retrieved passage, joined with
" [SEP] ".  Three encoder kinds share that contract:

* ``HashedEncoder`` — deterministic feature hashing (unigrams + bigrams,
  signed buckets, layer norm).  The desk-scale stand-in for a pretrained
  transformer.
* ``LinearEncoder`` — a trainable affine map over hashed features followed
  by layer norm; closed-form gradients are exposed for the trainer.
* ``RemoteEncoder`` — HTTP client for an external encoding service
  (POST /encode).

In-core encoders are pure functions of their configuration and input bytes;
query and passage encodings share weights unless a split/frozen passage
side is configured.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import requests

from .corpus import Passage
from .textproc import MASK64, token_hash, tokenize
from .vecmath import layer_norm, layer_norm_backward

SEP = " [SEP] "

# Character budget for in-core query rendering.  Derived from the full-scale
# token limits (350-token queries at ~8 chars/token); remote encoders apply
# their own token-based truncation instead.
MAX_QUERY_CHARS = 2800

# Featurizer seed baked into trained models: the model file format carries
# weights only, so the hash seed of the feature layer is a package constant.
MODEL_HASH_SEED = 0


class RemoteEncoderError(RuntimeError):
    """Remote encoding service unreachable or protocol violation."""


@dataclass(frozen=True)
class QueryInput:
    """A question plus the ordered passages retrieved on previous hops."""

    question: str
    prior_passages: tuple[Passage, ...] = ()

    def __post_init__(self) -> None:
        if not self.question:
            raise ValueError("question must be non-empty")
        object.__setattr__(self, "prior_passages", tuple(self.prior_passages))


def render_passage(passage: Passage) -> str:
    return f"{passage.title}{SEP}{passage.text}"


def render_query(query: QueryInput, max_chars: int | None = MAX_QUERY_CHARS) -> str:
    """Concatenate question and prior passages; truncate to `max_chars`."""
    text, _ = render_query_flagged(query, max_chars=max_chars)
    return text


def render_query_flagged(
    query: QueryInput, max_chars: int | None = MAX_QUERY_CHARS
) -> tuple[str, bool]:
    """Like `render_query` but also reports whether truncation happened."""
    parts = [query.question]
    for passage in query.prior_passages:
        parts.append(passage.title)
        parts.append(passage.text)
    text = SEP.join(parts)
    if max_chars is not None and len(text) > max_chars:
        return text[:max_chars], True
    return text, False


def hashed_embed(text: str, dimension: int, seed: int = 0) -> np.ndarray:
    """Signed feature hashing of unigrams and bigrams, then layer norm.

    Each feature's 64-bit FNV-1a hash is XORed with `seed`; bit 63 selects
    the sign and the remainder mod `dimension` the bucket.  Zero-token input
    maps to the zero vector (the layer-norm epsilon guards the zero std).
    """
    if dimension <= 1:
        raise ValueError(f"dimension must be > 1, got {dimension}")
    seed64 = seed & MASK64
    vec = np.zeros(dimension, dtype=np.float64)
    tokens = tokenize(text)
    for i, tok in enumerate(tokens):
        h = token_hash(tok) ^ seed64
        vec[h % dimension] += 1.0 - 2.0 * ((h >> 63) & 1)
        if i + 1 < len(tokens):
            h2 = token_hash(f"{tok} {tokens[i + 1]}") ^ seed64
            vec[h2 % dimension] += 1.0 - 2.0 * ((h2 >> 63) & 1)
    return layer_norm(vec)


def linear_embed(features: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """layer_norm(weights @ features + bias)."""
    out, _ = linear_embed_forward(features, weights, bias)
    return out


def linear_embed_forward(
    features: np.ndarray, weights: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Forward pass returning (output, pre-norm cache) for the backward pass.

    `features` may be a single vector or a row-stacked batch.
    """
    features = np.asarray(features, dtype=np.float64)
    d = weights.shape[0]
    if weights.shape != (d, d) or bias.shape != (d,) or features.shape[-1] != d:
        raise ValueError(
            f"shape mismatch: weights {weights.shape}, bias {bias.shape}, "
            f"features {features.shape}"
        )
    pre_norm = features @ weights.T + bias
    return layer_norm(pre_norm), pre_norm


def linear_embed_backward(
    features: np.ndarray, pre_norm: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (d_weights, d_bias) given the forward cache and output grads."""
    features2 = np.atleast_2d(np.asarray(features, dtype=np.float64))
    grad_pre = np.atleast_2d(layer_norm_backward(pre_norm, grad_out))
    d_weights = grad_pre.T @ features2
    d_bias = grad_pre.sum(axis=0)
    return d_weights, d_bias


class HashedEncoder:
    """Deterministic feature-hashing encoder; one weight set for both sides."""

    kind = "hashed"

    def __init__(self, dimension: int, seed: int = 0, max_query_chars: int | None = MAX_QUERY_CHARS):
        if dimension <= 1:
            raise ValueError(f"dimension must be > 1, got {dimension}")
        self.dimension = dimension
        self.seed = seed
        self.max_query_chars = max_query_chars

    def encode_text(self, text: str) -> np.ndarray:
        return hashed_embed(text, self.dimension, self.seed)

    def encode_passage(self, passage: Passage) -> np.ndarray:
        return self.encode_text(render_passage(passage))

    def encode_query(self, query: QueryInput) -> np.ndarray:
        return self.encode_text(render_query(query, max_chars=self.max_query_chars))


class LinearEncoder:
    """Trainable affine map over hashed features, then layer norm.

    The query side is (query_weights, query_bias).  The passage side shares
    it when `shared` is true and no frozen copy exists; a separate
    (passage_weights, passage_bias) pair serves either a split encoder or
    the frozen passage encoder of bank-phase training.  The trainer holds
    exclusive access while mutating weights.
    """

    kind = "linear"

    def __init__(
        self,
        dimension: int,
        query_weights: np.ndarray | None = None,
        query_bias: np.ndarray | None = None,
        passage_weights: np.ndarray | None = None,
        passage_bias: np.ndarray | None = None,
        shared: bool = True,
        phase: int = 1,
        hash_seed: int = MODEL_HASH_SEED,
        max_query_chars: int | None = MAX_QUERY_CHARS,
    ):
        if dimension <= 1:
            raise ValueError(f"dimension must be > 1, got {dimension}")
        self.dimension = dimension
        self.hash_seed = hash_seed
        self.shared = shared
        self.phase = phase
        self.max_query_chars = max_query_chars
        self.query_weights = (
            np.eye(dimension) if query_weights is None else np.asarray(query_weights, dtype=np.float64)
        )
        self.query_bias = (
            np.zeros(dimension) if query_bias is None else np.asarray(query_bias, dtype=np.float64)
        )
        self.passage_weights = (
            None if passage_weights is None else np.asarray(passage_weights, dtype=np.float64)
        )
        self.passage_bias = (
            None if passage_bias is None else np.asarray(passage_bias, dtype=np.float64)
        )
        if (self.passage_weights is None) != (self.passage_bias is None):
            raise ValueError("passage weights and bias must be given together")
        if not shared and self.passage_weights is None:
            self.passage_weights = np.eye(dimension)
            self.passage_bias = np.zeros(dimension)
        # Optional memo of hashed features (text -> vector); purely a speedup,
        # hashed features depend only on (text, dimension, hash_seed).
        self.feature_cache: dict[str, np.ndarray] | None = None
        self.feature_cache_limit = 30_000

    def features(self, text: str) -> np.ndarray:
        cache = self.feature_cache
        if cache is None:
            return hashed_embed(text, self.dimension, self.hash_seed)
        vec = cache.get(text)
        if vec is None:
            vec = hashed_embed(text, self.dimension, self.hash_seed)
            if len(cache) < self.feature_cache_limit:
                cache[text] = vec
        return vec

    @property
    def passage_side(self) -> tuple[np.ndarray, np.ndarray]:
        if self.passage_weights is not None:
            assert self.passage_bias is not None
            return self.passage_weights, self.passage_bias
        return self.query_weights, self.query_bias

    def encode_query_text(self, text: str) -> np.ndarray:
        return linear_embed(self.features(text), self.query_weights, self.query_bias)

    def encode_passage_text(self, text: str) -> np.ndarray:
        weights, bias = self.passage_side
        return linear_embed(self.features(text), weights, bias)

    def encode_passage(self, passage: Passage) -> np.ndarray:
        return self.encode_passage_text(render_passage(passage))

    def encode_query(self, query: QueryInput) -> np.ndarray:
        return self.encode_query_text(render_query(query, max_chars=self.max_query_chars))

    def freeze_passage_side(self) -> None:
        """Snapshot current query weights as the frozen passage encoder (phase 2)."""
        if self.passage_weights is None:
            self.passage_weights = self.query_weights.copy()
            self.passage_bias = self.query_bias.copy()
        self.phase = 2

    def quantize(self) -> None:
        """Round weights through float32 so in-memory and on-disk models agree."""
        self.query_weights = self.query_weights.astype(np.float32).astype(np.float64)
        self.query_bias = self.query_bias.astype(np.float32).astype(np.float64)
        if self.passage_weights is not None:
            self.passage_weights = self.passage_weights.astype(np.float32).astype(np.float64)
            self.passage_bias = self.passage_bias.astype(np.float32).astype(np.float64)

    def copy(self) -> "LinearEncoder":
        return LinearEncoder(
            dimension=self.dimension,
            query_weights=self.query_weights.copy(),
            query_bias=self.query_bias.copy(),
            passage_weights=None if self.passage_weights is None else self.passage_weights.copy(),
            passage_bias=None if self.passage_bias is None else self.passage_bias.copy(),
            shared=self.shared,
            phase=self.phase,
            hash_seed=self.hash_seed,
            max_query_chars=self.max_query_chars,
        )


class RemoteEncoder:
    """Client for the remote encoder protocol (POST /encode).

    Request: {"texts": [...], "mode": "query"|"passage"}; response:
    {"vectors": [[...], ...], "dimension": int} with order preserved.
    In-flight requests are bounded by a semaphore; the service applies its
    own token-based truncation, so no character truncation happens here.
    """

    kind = "remote"

    def __init__(
        self,
        url: str,
        dimension: int | None = None,
        timeout: float = 30.0,
        max_in_flight: int = 8,
        session: requests.Session | None = None,
    ):
        self.url = url.rstrip("/")
        self.dimension = dimension
        self.timeout = timeout
        self._semaphore = threading.Semaphore(max_in_flight)
        self._session = session or requests.Session()

    def encode_texts(self, texts: Sequence[str], mode: str) -> np.ndarray:
        if mode not in ("query", "passage"):
            raise ValueError(f"mode must be 'query' or 'passage', got {mode!r}")
        payload = {"texts": list(texts), "mode": mode}
        with self._semaphore:
            try:
                response = self._session.post(
                    f"{self.url}/encode", json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                raise RemoteEncoderError(f"encoder service unreachable: {exc}") from exc
        if response.status_code != 200:
            raise RemoteEncoderError(
                f"encoder service returned HTTP {response.status_code}: {response.text[:200]}"
            )
        body = response.json()
        vectors = np.asarray(body["vectors"], dtype=np.float64)
        dimension = int(body["dimension"])
        if vectors.ndim != 2 or vectors.shape[0] != len(texts) or vectors.shape[1] != dimension:
            raise RemoteEncoderError(
                f"malformed response: {vectors.shape} vectors for {len(texts)} texts, "
                f"declared dimension {dimension}"
            )
        if self.dimension is None:
            self.dimension = dimension
        elif dimension != self.dimension:
            raise RemoteEncoderError(
                f"service dimension {dimension} does not match expected {self.dimension}"
            )
        return vectors

    def encode_passage(self, passage: Passage) -> np.ndarray:
        return self.encode_texts([render_passage(passage)], mode="passage")[0]

    def encode_query(self, query: QueryInput) -> np.ndarray:
        text = render_query(query, max_chars=None)
        return self.encode_texts([text], mode="query")[0]


@dataclass(frozen=True)
class EncoderSpec:
    """Declarative encoder configuration: kind, dimension, kind-specific params."""

    kind: str
    dimension: int
    seed: int = 0
    url: str | None = None
    timeout: float = 30.0
    max_query_chars: int | None = MAX_QUERY_CHARS

    def build(self):
        if self.dimension <= 0:
            raise ValueError(f"dimension must be positive, got {self.dimension}")
        if self.kind == "hashed":
            return HashedEncoder(self.dimension, seed=self.seed, max_query_chars=self.max_query_chars)
        if self.kind == "linear":
            return LinearEncoder(
                self.dimension, hash_seed=self.seed, max_query_chars=self.max_query_chars
            )
        if self.kind == "remote":
            if not self.url:
                raise ValueError("remote encoder requires a url")
            return RemoteEncoder(self.url, dimension=self.dimension, timeout=self.timeout)
        raise ValueError(f"unknown encoder kind {self.kind!r}")
