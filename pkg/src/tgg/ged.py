"""Exact graph edit distance for small unlabeled digraphs.

Cost model: node insertion/deletion 1, edge insertion/deletion 1, node and
edge substitution free. Under free substitution an optimal edit path never
deletes and re-inserts a node, so

    ged(G, H) = | |V_G| - |V_H| | + min_pi | pi(E_G) xor E_H |

where both graphs are padded with isolated nodes to the same order and ``pi``
ranges over node bijections. The minimum is found by depth-first branch and
bound over partial bijections. The bound at each search node is

    cost(assigned pairs) + LSA over unassigned nodes of
        exact cost of edges to assigned nodes
        + (|d_out - d_out'| + |d_in - d_in'|) / 2 restricted to unassigned nodes

which never overestimates. The search is anytime: if the time budget runs
out, the best complete bijection found so far is returned with
``exact=False``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np
from scipy.optimize import linear_sum_assignment

from .graph import TemporalGraph

DEFAULT_BUDGET = 10.0


@dataclass(frozen=True)
class GEDResult:
    value: int
    exact: bool
    # node of the first graph -> node of the second (None = deleted / inserted)
    mapping: dict = field(default_factory=dict, compare=False)


def adjacency(nodes: Sequence[str], edges) -> np.ndarray:
    index = {n: i for i, n in enumerate(nodes)}
    a = np.zeros((len(nodes), len(nodes)), dtype=np.int8)
    for u, v in edges:
        a[index[u], index[v]] = 1
    return a


def _pad(a: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, n), dtype=np.int8)
    out[: a.shape[0], : a.shape[0]] = a
    return out


def _search_order(a: np.ndarray) -> list[int]:
    # grow from the highest-degree node so each new row touches assigned ones
    n = a.shape[0]
    und = (a | a.T).astype(np.int32)
    deg = und.sum(axis=1)
    order: list[int] = []
    left = set(range(n))
    link = np.zeros(n, dtype=np.int32)
    while left:
        best = max(left, key=lambda i: (link[i], deg[i], -i))
        order.append(best)
        left.discard(best)
        link += und[best]
    return order


def _mismatch(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # disagreements between every row of x and every row of y (0/1 int arrays)
    return x @ (1 - y).T + (1 - x) @ y.T


class _Search:
    def __init__(self, a: np.ndarray, b: np.ndarray, budget: float | None, max_expansions: int | None):
        self.a = a.astype(np.int32)
        self.b = b.astype(np.int32)
        self.n = a.shape[0]
        self.order = _search_order(a)
        self.deadline = None if budget is None else time.monotonic() + budget
        self.max_expansions = max_expansions
        self.expansions = 0
        self.timed_out = False
        self.best = math.inf
        self.best_perm: np.ndarray | None = None

    def full_cost(self, perm: np.ndarray) -> int:
        return int(np.abs(self.a - self.b[perm][:, perm]).sum())

    def _out_of_budget(self) -> bool:
        if self.max_expansions is not None and self.expansions >= self.max_expansions:
            return True
        if self.deadline is not None and (self.expansions & 63) == 0 and time.monotonic() > self.deadline:
            return True
        return False

    def bound(self, rows: np.ndarray, cols: np.ndarray, arows: np.ndarray, acols: np.ndarray):
        a_r = self.a[rows]
        b_c = self.b[cols]
        ar = a_r[:, rows]
        bc = b_c[:, cols]
        cost = 0.5 * (
            np.abs(ar.sum(axis=1)[:, None] - bc.sum(axis=1)[None, :])
            + np.abs(ar.sum(axis=0)[:, None] - bc.sum(axis=0)[None, :])
        )
        if len(arows):
            cost += _mismatch(a_r[:, arows], b_c[:, acols])
            cost += _mismatch(self.a[arows][:, rows].T, self.b[acols][:, cols].T)
        r, c = linear_sum_assignment(cost)
        return float(cost[r, c].sum()), cost, c

    def run(self) -> None:
        perm = np.full(self.n, -1, dtype=np.int64)
        self._dfs(0, perm, [], [], 0)

    def _dfs(self, depth: int, perm: np.ndarray, arows: list[int], acols: list[int], partial: int) -> None:
        if self.timed_out or self.best == 0:
            return
        self.expansions += 1
        if self._out_of_budget():
            self.timed_out = True
            return
        n = self.n
        if depth == n:
            if partial < self.best:
                self.best = partial
                self.best_perm = perm.copy()
            return
        rows = np.asarray(self.order[depth:])
        used = set(acols)
        cols = np.asarray([v for v in range(n) if v not in used])
        ar_idx = np.asarray(arows, dtype=np.int64)
        ac_idx = np.asarray(acols, dtype=np.int64)
        future, cost, lsa_cols = self.bound(rows, cols, ar_idx, ac_idx)
        if math.ceil(partial + future - 1e-9) >= self.best:
            return
        # the bound's own assignment is a complete bijection: use it as an incumbent
        cand = perm.copy()
        cand[rows] = cols[lsa_cols]
        c = self.full_cost(cand)
        if c < self.best:
            self.best = c
            self.best_perm = cand
            if math.ceil(partial + future - 1e-9) >= self.best:
                return
        i = int(rows[0])
        if len(arows):
            # exact cost of pairing row i with each free column against assigned nodes
            steps = _mismatch(self.a[i, ar_idx][None, :], self.b[cols][:, ac_idx])[0]
            steps = steps + _mismatch(self.a[ar_idx, i][None, :], self.b[ac_idx][:, cols].T)[0]
        else:
            steps = np.zeros(len(cols), dtype=np.int64)
        first = lsa_cols[0]
        ranked = sorted(range(len(cols)), key=lambda k: (cost[0, k], k != first, int(cols[k])))
        for k in ranked:
            step = int(steps[k])
            if partial + step >= self.best:
                continue
            v = int(cols[k])
            perm[i] = v
            arows.append(i)
            acols.append(v)
            self._dfs(depth + 1, perm, arows, acols, partial + step)
            arows.pop()
            acols.pop()
            perm[i] = -1
            if self.timed_out or self.best == 0:
                return


def _isomorphism(a: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    ga = nx.from_numpy_array(a, create_using=nx.DiGraph)
    gb = nx.from_numpy_array(b, create_using=nx.DiGraph)
    matcher = nx.algorithms.isomorphism.DiGraphMatcher(ga, gb)
    if not matcher.is_isomorphic():
        return None
    perm = np.empty(a.shape[0], dtype=np.int64)
    for i, j in matcher.mapping.items():
        perm[i] = j
    return perm


def ged_adjacency(
    a: np.ndarray,
    b: np.ndarray,
    budget: float | None = DEFAULT_BUDGET,
    max_expansions: int | None = None,
    shortcut: bool = True,
) -> tuple[int, bool, np.ndarray]:
    """GED between two adjacency matrices (no self-loops).

    Returns ``(value, exact, perm)`` with ``perm[i]`` the padded index of the
    second graph matched to padded node ``i`` of the first. ``shortcut=False``
    skips the isomorphism pre-check and always runs the search.
    """
    n1, n2 = a.shape[0], b.shape[0]
    n = max(n1, n2)
    if n == 0:
        return 0, True, np.zeros(0, dtype=np.int64)
    if shortcut and n1 == n2 and int(a.sum()) == int(b.sum()):
        iso = _isomorphism(a, b)
        if iso is not None:
            return 0, True, iso
    pa, pb = _pad(a, n), _pad(b, n)
    search = _Search(pa, pb, budget, max_expansions)
    search.run()
    if search.best_perm is None:
        identity = np.arange(n)
        search.best, search.best_perm = search.full_cost(identity), identity
    return abs(n1 - n2) + int(search.best), not search.timed_out, search.best_perm


def graph_edit_distance(
    gold: TemporalGraph,
    pred: TemporalGraph,
    budget: float | None = DEFAULT_BUDGET,
    max_expansions: int | None = None,
) -> GEDResult:
    """Edit distance between two temporal graphs.

    A graph with ``valid=False`` stands for a failed generation and is
    treated as the null graph, so the distance is the size of the other.
    """
    g_nodes = sorted(gold.nodes) if gold.valid else []
    p_nodes = sorted(pred.nodes) if pred.valid else []
    a = adjacency(g_nodes, gold.edges if gold.valid else ())
    b = adjacency(p_nodes, pred.edges if pred.valid else ())
    value, exact, perm = ged_adjacency(a, b, budget, max_expansions)
    mapping = {}
    for i, node in enumerate(g_nodes):
        j = int(perm[i])
        mapping[node] = p_nodes[j] if j < len(p_nodes) else None
    return GEDResult(value, exact, mapping)
