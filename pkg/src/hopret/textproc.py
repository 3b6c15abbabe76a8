"""Shared text primitives: tokenization and 64-bit FNV-1a hashing.

Every component that looks at raw text (TF-IDF, the hashed embedder, the
lexical chain scorer) tokenizes through the same function so their notions
of "a token" cannot drift apart.
"""

from __future__ import annotations

import re
from functools import lru_cache

# Unicode alphanumerics, underscore excluded: splitting on "non-alphanumeric".
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


def tokenize(text: str) -> list[str]:
    """Lowercase `text` and split it on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of `data` (also used as the file-format checksum)."""
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & MASK64
    return h


@lru_cache(maxsize=1 << 16)
def token_hash(token: str) -> int:
    """FNV-1a of a token's UTF-8 bytes, memoized (tokens repeat heavily)."""
    return fnv1a64(token.encode("utf-8"))
