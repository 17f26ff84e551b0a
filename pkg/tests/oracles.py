"""Slow reference implementations the fast code is checked against.

Nothing here imports the package's GED code: graphs are plain edge sets
over ``range(n)`` and everything is brute force over permutations.
"""
from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np


def brute_ged(n1: int, e1: set, n2: int, e2: set) -> int:
    """Edit distance by trying every bijection between the padded node sets."""
    n = max(n1, n2)
    best = None
    for perm in itertools.permutations(range(n)):
        mapped = {(perm[u], perm[v]) for u, v in e1}
        cost = len(mapped ^ e2)
        if best is None or cost < best:
            best = cost
    return abs(n1 - n2) + (best or 0)


def brute_isomorphic(n1: int, e1: set, n2: int, e2: set) -> bool:
    if n1 != n2 or len(e1) != len(e2):
        return False
    return any({(p[u], p[v]) for u, v in e1} == e2 for p in itertools.permutations(range(n1)))


@lru_cache(maxsize=None)
def slots(n: int) -> tuple[tuple[int, int], ...]:
    """Ordered pairs (i, j), i != j; bit k of a graph code is edge ``slots(n)[k]``."""
    return tuple((i, j) for i in range(n) for j in range(n) if i != j)


def decode(n: int, code: int) -> set:
    return {s for k, s in enumerate(slots(n)) if code >> k & 1}


def encode(n: int, edges) -> int:
    index = {s: k for k, s in enumerate(slots(n))}
    return sum(1 << index[e] for e in edges)


def _chunk_tables(n: int, width: int = 5) -> tuple[np.ndarray, int]:
    """Lookup tables mapping each ``width``-bit chunk of a code to its relabelled bits, per permutation."""
    pairs = slots(n)
    index = {s: k for k, s in enumerate(pairs)}
    perms = list(itertools.permutations(range(n)))
    m = len(pairs)
    chunks = (m + width - 1) // width
    tables = np.zeros((len(perms), chunks, 1 << width), dtype=np.int64)
    for p, perm in enumerate(perms):
        target = [index[(perm[i], perm[j])] for i, j in pairs]
        for c in range(chunks):
            for value in range(1 << width):
                out = 0
                for b in range(width):
                    k = c * width + b
                    if k < m and value >> b & 1:
                        out |= 1 << target[k]
                tables[p, c, value] = out
    return tables, width


def canonical_codes(n: int, codes: np.ndarray | None = None) -> np.ndarray:
    """Minimum code over all relabellings, for every graph code on ``n`` nodes."""
    m = n * (n - 1)
    if codes is None:
        codes = np.arange(1 << m, dtype=np.int64)
    if n <= 1:
        return codes.copy()
    tables, width = _chunk_tables(n)
    mask = (1 << width) - 1
    pieces = [(codes >> (c * width)) & mask for c in range(tables.shape[1])]
    best = np.full(codes.shape, np.iinfo(np.int64).max, dtype=np.int64)
    for p in range(tables.shape[0]):
        relabelled = np.zeros_like(codes)
        for c, piece in enumerate(pieces):
            relabelled |= tables[p, c][piece]
        np.minimum(best, relabelled, out=best)
    return best


def nonisomorphic_digraphs(n: int) -> list[int]:
    """One canonical code per isomorphism class of simple digraphs on ``n`` nodes."""
    return sorted(set(np.unique(canonical_codes(n)).tolist()))


def degree_signature(n: int, edges: set) -> tuple:
    out = [0] * n
    inn = [0] * n
    for u, v in edges:
        out[u] += 1
        inn[v] += 1
    return tuple(sorted(zip(out, inn)))


def random_relabel(n: int, edges: set, rng) -> set:
    perm = rng.permutation(n)
    return {(int(perm[u]), int(perm[v])) for u, v in edges}
