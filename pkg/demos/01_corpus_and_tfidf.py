"""Load a passage corpus and poke at the TF-IDF scorer.

Builds a tiny JSONL corpus on the fly, loads it through the normal
ingestion path, and shows lexical retrieval plus the handle bijection.
"""

import json
import tempfile
from pathlib import Path

from hopret import load_corpus

passages = [
    {"id": "paris", "title": "Paris", "text": "Paris is the capital of France"},
    {"id": "berlin", "title": "Berlin", "text": "Berlin is the capital of Germany"},
    {"id": "louvre", "title": "Louvre", "text": "the Louvre museum is located in Paris"},
    {"id": "rhine", "title": "Rhine", "text": "the Rhine flows through Germany"},
]

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "corpus.jsonl"
    path.write_text("\n".join(json.dumps(p) for p in passages))
    corpus = load_corpus(path)

print(f"loaded {len(corpus)} passages")
for ordinal in range(len(corpus)):
    passage = corpus.lookup(ordinal)
    assert corpus.handle_of(passage.id) == ordinal  # handles are a bijection
    print(f"  handle {ordinal} -> {passage.id}: {passage.text}")

print("\nTF-IDF for 'museum in Paris':")
for handle, score in corpus.tfidf_scores("museum in Paris", k=3):
    print(f"  {score:.4f}  {corpus.lookup(handle).id}")
