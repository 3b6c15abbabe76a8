import json

import numpy as np
import pytest

from hopret.corpus import Corpus, Passage
from hopret.encoders import HashedEncoder
from hopret.index import FlatIndex, HnswIndex, HnswParams


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


def random_passages(rng, n, vocab_size=30, min_len=4, max_len=12):
    vocab = [f"word{i}" for i in range(vocab_size)]
    out = []
    for i in range(n):
        k = int(rng.integers(min_len, max_len + 1))
        words = [vocab[int(j)] for j in rng.integers(0, vocab_size, size=k)]
        out.append(
            Passage(id=f"p{i}", title=f"title {i % 7}", text=" ".join(words))
        )
    return out


@pytest.fixture
def tiny_corpus():
    return Corpus(
        [
            Passage(id="a", title="Alpha", text="the quick brown fox"),
            Passage(id="b", title="Beta", text="jumped over the lazy dog"),
            Passage(id="c", title="Gamma", text="retrieval with dense vectors"),
        ]
    )


@pytest.fixture(scope="session")
def gaussian_10k():
    rng = np.random.default_rng(12345)
    return rng.standard_normal((10_000, 64))


@pytest.fixture(scope="session")
def flat_10k(gaussian_10k):
    return FlatIndex.build(gaussian_10k)


@pytest.fixture(scope="session")
def hnsw_10k(flat_10k):
    return HnswIndex.build(flat_10k, HnswParams(seed=99))


@pytest.fixture(scope="session")
def hashed_encoder():
    return HashedEncoder(dimension=48, seed=11)
