"""Token-hashing embeddings and exact top-k retrieval.

The offline embedder is a signed token-count hash: deterministic,
dependency-free, and token overlap shows up directly in the dot product.
That makes brute-force search over topic summaries behave like semantic
retrieval on fixtures you can reason about by hand.
"""

import numpy as np

from remem.bank import MemoryBank
from remem.embedding import EmbedderConfig, embed, similarity, tokenize
from remem.transcripts import SegmentRef

cfg = EmbedderConfig(dimension=512)
print("embedder:", cfg.embedder_id)
print()

# Tokenization: lowercase, split on non-alphanumerics.
print("tokens:", tokenize("My dog Biscuit (a beagle!) loves fetch."))

# Same text, same vector, unit norm.
a = embed("I am training for the coastal marathon", cfg)
b = embed("I am training for the coastal marathon", cfg)
print("deterministic:", np.array_equal(a.values, b.values),
      "| norm:", round(float(np.linalg.norm(a.values)), 6))
print()

# Token overlap drives similarity.
pairs = [
    ("I am training for the coastal marathon",
     "my marathon training is going well"),
    ("I am training for the coastal marathon",
     "my sourdough starter needs feeding"),
]
for left, right in pairs:
    sim = similarity(embed(left, cfg), embed(right, cfg))
    print(f"  sim={sim:+.3f}  {left!r} vs {right!r}")
print()

# A small bank: summaries are the search keys.
bank = MemoryBank("demo", "alice", cfg)
facts = [
    "I am allergic to penicillin and avoid it strictly",
    "My dog Biscuit is a beagle who loves fetch",
    "I am training for the coastal marathon in April",
    "My sister Clara teaches physics in Geneva",
]
for i, fact in enumerate(facts):
    bank.make_entry(fact, [SegmentRef(f"s{i}", (0,))])

query = "what am I allergic to?"
print(f"query: {query!r}")
for result in bank.search_top_k(embed(query, cfg), k=3):
    entry = bank.get(result.entry_id)
    print(f"  rank {result.rank}  score {result.score:+.3f}  "
          f"{entry.topic_summary}")
