"""Vector indexes: exact flat MIPS scan, HNSW approximate search, persistence.

Both index kinds are immutable after build and safe for concurrent reads.
Vectors are canonically stored as float32 (the on-disk precision) and cast
exactly to float64 for scoring, so an index behaves bit-identically before
and after a save/load round trip.
"""

from __future__ import annotations

import heapq
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .textproc import fnv1a64
from .vecmath import dot_scores, top_k_indices

MAGIC = b"MDRIDX1\x00"
FORMAT_VERSION = 1
KIND_FLAT = 0
KIND_HNSW = 1


class IndexFormatError(ValueError):
    """Raised when an index file is malformed, truncated, or corrupt."""


class FlatIndex:
    """Exact maximum-inner-product search by full scan.

    Results are sorted by descending score; equal scores break ties by
    ascending ordinal.
    """

    kind = "flat"

    def __init__(self, vectors: np.ndarray, ids: Sequence[str]):
        self.vectors = vectors  # float32, C-contiguous, count x dimension
        self.ids: tuple[str, ...] = tuple(ids)
        self._scan = vectors.astype(np.float64)  # exact widening for scoring

    @classmethod
    def build(cls, vectors, ids: Sequence[str] | None = None) -> "FlatIndex":
        matrix = np.asarray(vectors, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] == 0 or matrix.shape[1] == 0:
            raise ValueError(f"need a non-empty 2-D vector matrix, got shape {matrix.shape}")
        finite = np.isfinite(matrix).all(axis=1)
        if not finite.all():
            bad = int(np.flatnonzero(~finite)[0])
            raise ValueError(f"non-finite value in row {bad}")
        if ids is None:
            ids = [str(i) for i in range(matrix.shape[0])]
        if len(ids) != matrix.shape[0]:
            raise ValueError(f"{len(ids)} ids for {matrix.shape[0]} vectors")
        return cls(np.ascontiguousarray(matrix, dtype=np.float32), ids)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def _check_query(self, query: np.ndarray) -> np.ndarray:
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.dimension,):
            raise ValueError(
                f"query shape {query.shape} does not match index dimension {self.dimension}"
            )
        return query

    def scores(self, query: np.ndarray) -> np.ndarray:
        """Inner product of every stored vector with `query` (oracle-friendly)."""
        return dot_scores(self._scan, self._check_query(query))

    def search(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        scores = self.scores(query)
        top = top_k_indices(scores, min(k, self.count))
        return [(int(i), float(scores[i])) for i in top]


@dataclass(frozen=True)
class HnswParams:
    """Graph construction/search knobs. `seed` drives level assignment."""

    m_links: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.m_links < 2:
            raise ValueError(f"m_links must be >= 2, got {self.m_links}")
        if self.ef_construction < 1:
            raise ValueError(f"ef_construction must be >= 1, got {self.ef_construction}")
        if self.ef_search < 1:
            raise ValueError(f"ef_search must be >= 1, got {self.ef_search}")


class HnswIndex:
    """Hierarchical navigable small-world graph over a FlatIndex, scored by
    inner product throughout.

    Node levels follow the standard geometric distribution (floor of
    -ln(U) / ln(M)) drawn from a seeded generator in insertion order, so a
    given (vectors, params) pair always builds the identical graph.  Level 0
    allows 3*M neighbors, upper levels M: inner-product search concentrates
    on high-norm hubs, and the wider base layer is what keeps recall@10
    above 0.95 at the default search beam.
    """

    kind = "hnsw"

    def __init__(
        self,
        base: FlatIndex,
        graph: list[list[list[int]]],
        levels: list[int],
        entry_point: int,
        max_level: int,
        params: HnswParams,
    ):
        self.base = base
        self._graph = graph
        self._levels = levels
        self.entry_point = entry_point
        self.max_level = max_level
        self.params = params
        self._scan = base._scan
        self._stamps = np.zeros(base.count, dtype=np.int64)
        self._stamp = 0

    @property
    def count(self) -> int:
        return self.base.count

    @property
    def dimension(self) -> int:
        return self.base.dimension

    @property
    def ids(self) -> tuple[str, ...]:
        return self.base.ids

    @classmethod
    def build(cls, flat: FlatIndex, params: HnswParams = HnswParams()) -> "HnswIndex":
        params.validate()
        n = flat.count
        rng = np.random.Generator(np.random.PCG64(params.seed))
        inv_log_m = 1.0 / math.log(params.m_links)
        draws = rng.random(n)
        levels = [int(-math.log(max(u, 1e-300)) * inv_log_m) for u in draws]
        graph: list[list[list[int]]] = [[[] for _ in range(levels[i] + 1)] for i in range(n)]
        index = cls(flat, graph, levels, entry_point=0, max_level=levels[0], params=params)
        for node in range(1, n):
            index._insert(node)
        return index

    # construction ----------------------------------------------------------

    def _max_neighbors(self, layer: int) -> int:
        return 3 * self.params.m_links if layer == 0 else self.params.m_links

    def _insert(self, node: int) -> None:
        level = self._levels[node]
        query = self._scan[node]
        entry = [(float(dot_scores(self._scan[self.entry_point : self.entry_point + 1], query)[0]),
                  self.entry_point)]
        for layer in range(self.max_level, level, -1):
            entry = self._search_layer(query, entry, layer, ef=1)
        for layer in range(min(level, self.max_level), -1, -1):
            candidates = self._search_layer(query, entry, layer, ef=self.params.ef_construction)
            m = self._max_neighbors(layer)
            neighbors = self._select_neighbors(query, candidates, m)
            self._graph[node][layer] = list(neighbors)
            for nb in neighbors:
                links = self._graph[nb][layer]
                links.append(node)
                if len(links) > m:
                    nb_vec = self._scan[nb]
                    link_scores = dot_scores(self._scan[links], nb_vec)
                    ranked = sorted(
                        zip(link_scores, links), key=lambda sn: (-sn[0], sn[1])
                    )
                    self._graph[nb][layer] = self._select_neighbors(nb_vec, ranked, m)
            entry = candidates
        if level > self.max_level:
            self.entry_point = node
            self.max_level = level

    def _select_neighbors(
        self, base_vec: np.ndarray, candidates: list[tuple[float, int]], m: int
    ) -> list[int]:
        """Diversity-aware neighbor selection: keep a candidate only if it is
        closer (higher inner product) to the base than to any already-selected
        neighbor; backfill from the pruned pool to reach m."""
        if len(candidates) <= m:
            return [node for _, node in candidates]
        nodes = [node for _, node in candidates]
        vectors = self._scan[nodes]
        cross = np.einsum("ik,jk->ij", vectors, vectors)  # candidate-to-candidate sims
        selected: list[int] = []  # positions into `candidates`
        pruned: list[int] = []
        for pos, (score, _) in enumerate(candidates):
            if len(selected) == m:
                break
            if not selected:
                selected.append(pos)
                continue
            if score > cross[pos, selected].max():
                selected.append(pos)
            else:
                pruned.append(pos)
        for pos in pruned:
            if len(selected) == m:
                break
            selected.append(pos)
        return [nodes[pos] for pos in selected]

    def _search_layer(
        self, query: np.ndarray, entries: list[tuple[float, int]], layer: int, ef: int
    ) -> list[tuple[float, int]]:
        """Best-first beam search within one layer.

        Returns up to `ef` (score, node) pairs sorted by descending score,
        ties by ascending node.  Ties everywhere resolve on node ordinal so
        construction and search are fully deterministic.
        """
        self._stamp += 1
        stamp = self._stamp
        stamps = self._stamps
        candidates: list[tuple[float, int]] = []  # min-heap on (-score, node)
        best: list[tuple[float, int]] = []  # min-heap on (score, -node): worst first
        for score, node in entries:
            if stamps[node] == stamp:
                continue
            stamps[node] = stamp
            heapq.heappush(candidates, (-score, node))
            heapq.heappush(best, (score, -node))
        while candidates:
            neg_score, node = heapq.heappop(candidates)
            if len(best) >= ef and -neg_score < best[0][0]:
                break
            neighbors = self._graph[node][layer] if layer < len(self._graph[node]) else []
            fresh = [nb for nb in neighbors if stamps[nb] != stamp]
            if not fresh:
                continue
            for nb in fresh:
                stamps[nb] = stamp
            scores = dot_scores(self._scan[fresh], query)
            for nb, score in zip(fresh, scores):
                score = float(score)
                if len(best) < ef:
                    heapq.heappush(best, (score, -nb))
                    heapq.heappush(candidates, (-score, nb))
                elif (score, -nb) > best[0]:
                    heapq.heapreplace(best, (score, -nb))
                    heapq.heappush(candidates, (-score, nb))
        return sorted(((score, -neg) for score, neg in best), key=lambda sn: (-sn[0], sn[1]))

    # search ------------------------------------------------------------------

    def search(
        self, query: np.ndarray, k: int, ef_search: int | None = None
    ) -> list[tuple[int, float]]:
        """Approximate top-k by inner product; returned scores are exact."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        ef = self.params.ef_search if ef_search is None else ef_search
        if ef < k:
            raise ValueError(f"ef_search ({ef}) must be >= k ({k})")
        query = self.base._check_query(query)
        entry = [(float(dot_scores(self._scan[self.entry_point : self.entry_point + 1], query)[0]),
                  self.entry_point)]
        for layer in range(self.max_level, 0, -1):
            entry = self._search_layer(query, entry, layer, ef=1)
        results = self._search_layer(query, entry, 0, ef=ef)
        return [(node, score) for score, node in results[:k]]


# persistence ----------------------------------------------------------------


def save_index(index: FlatIndex | HnswIndex, path: str | Path) -> None:
    """Serialize an index; written atomically (temp file + rename)."""
    path = Path(path)
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", FORMAT_VERSION)
    if isinstance(index, HnswIndex):
        kind, flat = KIND_HNSW, index.base
    elif isinstance(index, FlatIndex):
        kind, flat = KIND_FLAT, index
    else:
        raise TypeError(f"cannot save {type(index).__name__}")
    buf += struct.pack("<B", kind)
    buf += struct.pack("<I", flat.dimension)
    buf += struct.pack("<Q", flat.count)
    buf += np.ascontiguousarray(flat.vectors, dtype="<f4").tobytes()
    for passage_id in flat.ids:
        raw = passage_id.encode("utf-8")
        buf += struct.pack("<I", len(raw))
        buf += raw
    if isinstance(index, HnswIndex):
        buf += struct.pack("<II", index.params.m_links, index.params.ef_construction)
        buf += struct.pack("<Q", index.entry_point)
        buf += struct.pack("<I", index.max_level)
        for node in range(index.count):
            level = index._levels[node]
            if level > 255:
                raise IndexFormatError(f"node {node} level {level} exceeds format limit")
            buf += struct.pack("<B", level)
            for layer in range(level + 1):
                neighbors = index._graph[node][layer]
                buf += struct.pack("<I", len(neighbors))
                buf += struct.pack(f"<{len(neighbors)}Q", *neighbors)
    buf += struct.pack("<Q", fnv1a64(bytes(buf)))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(buf))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexFormatError("truncated index file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_index(path: str | Path) -> FlatIndex | HnswIndex:
    """Load an index file, verifying magic, version, and trailing checksum."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8:
        raise IndexFormatError("truncated index file")
    if data[: len(MAGIC)] != MAGIC:
        raise IndexFormatError(f"bad magic {data[:8]!r}")
    (stored_checksum,) = struct.unpack("<Q", data[-8:])
    if fnv1a64(data[:-8]) != stored_checksum:
        raise IndexFormatError("checksum mismatch")
    reader = _Reader(data[:-8])
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index format version {version}")
    (kind,) = reader.unpack("<B")
    (dimension,) = reader.unpack("<I")
    (count,) = reader.unpack("<Q")
    raw = reader.take(count * dimension * 4)
    vectors = np.frombuffer(raw, dtype="<f4").reshape(count, dimension).copy()
    ids = []
    for _ in range(count):
        (length,) = reader.unpack("<I")
        ids.append(reader.take(length).decode("utf-8"))
    flat = FlatIndex(vectors, ids)
    if kind == KIND_FLAT:
        return flat
    if kind != KIND_HNSW:
        raise IndexFormatError(f"unknown index kind {kind}")
    m_links, ef_construction = reader.unpack("<II")
    (entry_point,) = reader.unpack("<Q")
    (max_level,) = reader.unpack("<I")
    levels: list[int] = []
    graph: list[list[list[int]]] = []
    for _ in range(count):
        (level,) = reader.unpack("<B")
        levels.append(level)
        layers = []
        for _ in range(level + 1):
            (n_neighbors,) = reader.unpack("<I")
            layers.append(list(reader.unpack(f"<{n_neighbors}Q")))
        graph.append(layers)
    params = HnswParams(m_links=m_links, ef_construction=ef_construction)
    return HnswIndex(flat, graph, levels, int(entry_point), int(max_level), params)


def build_flat(vectors, ids: Sequence[str] | None = None) -> FlatIndex:
    return FlatIndex.build(vectors, ids)


def build_hnsw(flat: FlatIndex, params: HnswParams = HnswParams()) -> HnswIndex:
    return HnswIndex.build(flat, params)
