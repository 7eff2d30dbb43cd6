"""Shared test utilities: finite differences, partition enumeration, and
independent brute-force metric oracles.

The oracles here deliberately avoid the library's contingency-table code
paths: they work from raw label vectors via pair enumeration, direct
probability counting, or permutation averaging, so they can catch errors in
the real implementations.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np


# ---------------------------------------------------------------------------
# finite differences


def central_difference(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Entrywise central finite differences of scalar f at array x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def directional_difference(f, x: np.ndarray, direction: np.ndarray, eps: float = 1e-5) -> float:
    """Central finite difference of scalar f along one direction."""
    orig = x.copy()
    x += eps * direction
    fp = f()
    x[...] = orig - eps * direction
    fm = f()
    x[...] = orig
    return (fp - fm) / (2.0 * eps)


def rel_err(a: float, b: float, floor: float = 1e-12) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


# ---------------------------------------------------------------------------
# partitions


def set_partitions(n: int):
    """All partitions of {0..n-1} as label tuples (restricted growth strings)."""
    labels = [0] * n

    def rec(i: int, k: int):
        if i == n:
            yield tuple(labels)
            return
        for c in range(k + 1):
            labels[i] = c
            yield from rec(i + 1, max(k, c + 1))

    yield from rec(1, 1) if n > 1 else iter([(0,) * n])


# ---------------------------------------------------------------------------
# brute-force metric oracles (operate on raw label vectors)


def oracle_pair_counts(a, b) -> tuple[int, int, int, int]:
    """(n11, n10, n01, n00) over unordered entity pairs: co-clustered in
    (both, A only, B only, neither)."""
    n11 = n10 = n01 = n00 = 0
    n = len(a)
    for i in range(n):
        for j in range(i + 1, n):
            sa = a[i] == a[j]
            sb = b[i] == b[j]
            if sa and sb:
                n11 += 1
            elif sa:
                n10 += 1
            elif sb:
                n01 += 1
            else:
                n00 += 1
    return n11, n10, n01, n00


def oracle_rand_index(a, b) -> float:
    n11, n10, n01, n00 = oracle_pair_counts(a, b)
    return (n11 + n00) / (n11 + n10 + n01 + n00)


def oracle_adjusted_rand_index(a, b) -> float:
    """Pair-confusion closed form, independent of binomial marginals math."""
    n11, n10, n01, n00 = oracle_pair_counts(a, b)
    num = 2.0 * (n11 * n00 - n10 * n01)
    den = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00)
    if den == 0.0:
        return 1.0 if num == 0.0 else 0.0
    return num / den


def oracle_entropy(labels) -> float:
    n = len(labels)
    return -sum((c / n) * math.log(c / n) for c in Counter(labels).values())


def oracle_mi(a, b) -> float:
    n = len(a)
    joint = Counter(zip(a, b))
    ca = Counter(a)
    cb = Counter(b)
    mi = 0.0
    for (x, y), c in joint.items():
        mi += (c / n) * math.log(c * n / (ca[x] * cb[y]))
    return mi


def oracle_nmi(a, b) -> float:
    h_a = oracle_entropy(a)
    h_b = oracle_entropy(b)
    if h_a + h_b <= 1e-15:
        return 1.0
    return 2.0 * oracle_mi(a, b) / (h_a + h_b)


def oracle_expected_mi(a, b) -> float:
    """Average MI over all n! item permutations of b (the permutation model).

    Exact for small n; cache by marginal multisets since E[MI] depends only
    on the two marginal vectors.
    """
    key = (tuple(sorted(Counter(a).values())), tuple(sorted(Counter(b).values())))
    cached = _EMI_CACHE.get(key)
    if cached is not None:
        return cached
    n = len(b)
    total = 0.0
    count = 0
    for perm in itertools.permutations(range(n)):
        total += oracle_mi(a, [b[i] for i in perm])
        count += 1
    value = total / count
    _EMI_CACHE[key] = value
    return value


_EMI_CACHE: dict = {}


def oracle_ami(a, b) -> float:
    mi = oracle_mi(a, b)
    emi = oracle_expected_mi(a, b)
    denom = 0.5 * (oracle_entropy(a) + oracle_entropy(b)) - emi
    if abs(denom) <= 1e-15:
        return 1.0 if abs(mi - emi) <= 1e-15 else 0.0
    return (mi - emi) / denom


def oracle_f1(a, b) -> float:
    """Best-match precision/recall from explicit cluster member sets."""
    n = len(a)
    clusters_a = {}
    clusters_b = {}
    for i, (x, y) in enumerate(zip(a, b)):
        clusters_a.setdefault(x, set()).add(i)
        clusters_b.setdefault(y, set()).add(i)
    precision = sum(max(len(cb & ca) for ca in clusters_a.values()) for cb in clusters_b.values()) / n
    recall = sum(max(len(ca & cb) for cb in clusters_b.values()) for ca in clusters_a.values()) / n
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# clustering oracles


def oracle_average_link(values: np.ndarray, threshold: float) -> list[list[int]]:
    """Naive re-implementation of average-link merging for cross-checks."""
    n = values.shape[0]
    clusters = [[i] for i in range(n)]
    while len(clusters) > 1:
        best = None
        pair = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                link = float(np.mean([values[a, b] for a in clusters[i] for b in clusters[j]]))
                if best is None or link > best:
                    best = link
                    pair = (i, j)
        if best is None or best < threshold:
            break
        i, j = pair
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]
    return clusters


def word_overlap_clusters(texts: list[str]) -> list[int]:
    """Connected components of the shares-a-word graph (heuristic baseline)."""
    words = [set(t.split()) for t in texts]
    n = len(texts)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if words[i] & words[j]:
                parent[find(i)] = find(j)
    roots = {}
    labels = []
    for i in range(n):
        r = find(i)
        if r not in roots:
            roots[r] = len(roots)
        labels.append(roots[r])
    return labels
