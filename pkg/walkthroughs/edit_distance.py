"""Graph edit distance on small temporal graphs.

Run with ``python3 walkthroughs/edit_distance.py``.
"""
import time

import numpy as np

from tgg.ged import ged_adjacency, graph_edit_distance
from tgg.graph import TemporalGraph, linear_chain

# A five step morning routine with one branch: after waking up you can
# shower and make coffee in either order, both before leaving.
gold = TemporalGraph(
    frozenset("wake shower coffee dress leave".split()),
    frozenset({("wake", "shower"), ("wake", "coffee"), ("shower", "dress"), ("coffee", "leave"), ("dress", "leave")}),
)

# A linear chain over the same events, as a model that ignores the branch
# would produce.
chain = linear_chain(["wake", "shower", "coffee", "dress", "leave"])
r = graph_edit_distance(gold, chain)
print("gold vs chain:", r.value, "exact" if r.exact else "upper bound")
print("node mapping:", r.mapping)

# Relabelling nodes never changes the distance: substitution is free.
renamed = TemporalGraph(frozenset("abcde"), frozenset({("a", "b"), ("a", "c"), ("b", "d"), ("c", "e"), ("d", "e")}))
print("gold vs renamed copy:", graph_edit_distance(gold, renamed).value)

# A failed generation is scored against the null graph.
failed = TemporalGraph(frozenset(), frozenset(), valid=False)
print("gold vs failed output:", graph_edit_distance(gold, failed).value, "= |V| + |E| =", len(gold.nodes) + len(gold.edges))

# The search works on adjacency matrices directly. Random sparse DAGs of
# growing size show how the exact search scales.
rng = np.random.default_rng(0)
for n in (6, 8, 10, 12):
    a = np.triu(rng.random((n, n)) < 0.3, 1).astype(np.int8)
    b = np.triu(rng.random((n, n)) < 0.3, 1).astype(np.int8)
    t0 = time.perf_counter()
    value, exact, _ = ged_adjacency(a, b, budget=5.0)
    print(f"n={n:2d}  ged={value:2d}  exact={exact}  {time.perf_counter() - t0:.3f}s")
