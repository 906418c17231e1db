"""
Borrowing from similar episodes
===============================

The reference variant prepends the goals, first-screen captions and
action sequences of the k most similar episodes. Similarity is cosine
over hashed character trigrams of the goal text.
"""

import numpy as np

from dpot import Retriever, generate_synthetic
from dpot.retrieval import cosine, embed_goal

ds = generate_synthetic(seed=11, n_episodes=40)
query = ds.episodes[0]
print(f"query: {query.goal!r} [{query.subset}]")

# the pool is the query's own subset, minus the query itself
pool = [e for e in ds.episodes if e.subset == query.subset and e.id != query.id]
q = embed_goal(query.goal)
sims = np.array([cosine(q, embed_goal(e.goal)) for e in pool])
for i in np.argsort(-sims, kind="stable")[:5]:
    print(f"  {sims[i]:.3f}  {pool[i].goal}")

retriever = Retriever(ds, k=2)
block = retriever.reference_block(query)
for ref in block.entries:
    print(f"\nreference goal: {ref.goal}\ncaption: {ref.caption}")
    print("actions:", ", ".join(ref.action_descriptions))
