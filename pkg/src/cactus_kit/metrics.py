"""Extrinsic clustering metrics over a contingency table.

Given a reference clustering A and a predicted clustering B of the same
entity set, all five scores (NMI, AMI, RI, ARI, F1) are derived from the
r x s co-occurrence count table. Entropies and mutual information use the
natural logarithm (the normalized scores are base-invariant). Pair counts
for RI/ARI use exact integer binomials; the expected mutual information
under the fixed-marginals permutation model is evaluated in log-factorial
space so large counts cannot overflow.

Degenerate denominators follow the usual convention: exact agreement scores
1, disagreement with an undefined baseline scores 0. Each function notes its
own case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cluster import Clustering

__all__ = [
    "ContingencyTable",
    "contingency",
    "nmi",
    "expected_mi",
    "ami",
    "rand_index",
    "adjusted_rand_index",
    "f1",
    "all_metrics",
]

_EPS = 1e-15


@dataclass(frozen=True)
class ContingencyTable:
    """Co-occurrence counts n_ij between clusters of A (rows) and B (columns)."""

    counts: np.ndarray
    row_marginals: np.ndarray = field(init=False)
    col_marginals: np.ndarray = field(init=False)
    n: int = field(init=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or (counts < 0).any():
            raise ValueError("contingency counts must be a non-negative 2-d integer array")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "row_marginals", counts.sum(axis=1))
        object.__setattr__(self, "col_marginals", counts.sum(axis=0))
        object.__setattr__(self, "n", int(counts.sum()))

    def transposed(self) -> "ContingencyTable":
        return ContingencyTable(self.counts.T)


def contingency(truth: Clustering, pred: Clustering) -> ContingencyTable:
    """Count table with n_ij = |cluster i of truth  intersect  cluster j of pred|."""
    if truth.n != pred.n:
        raise ValueError(f"clusterings cover different sets: {truth.n} vs {pred.n} entities")
    if truth.set_id and pred.set_id and truth.set_id != pred.set_id:
        raise ValueError(f"clusterings refer to different sets: {truth.set_id!r} vs {pred.set_id!r}")
    r = truth.num_clusters
    s = pred.num_clusters
    counts = np.zeros((r, s), dtype=np.int64)
    for i, j in zip(truth.labels, pred.labels):
        counts[i, j] += 1
    return ContingencyTable(counts)


def _entropies_and_mi(t: ContingencyTable) -> tuple[float, float, float]:
    # MI terms are decomposed as log(nij/n) - log(ai/n) - log(bj/n) so that
    # identical clusterings reuse the entropy terms' exact float operations
    # and NMI comes out exactly 1 there
    n = t.n
    a = t.row_marginals
    b = t.col_marginals
    h_a = -sum((ai / n) * math.log(ai / n) for ai in a if ai > 0)
    h_b = -sum((bj / n) * math.log(bj / n) for bj in b if bj > 0)
    mi = 0.0
    for i in range(t.counts.shape[0]):
        ai = a[i]
        if ai == 0:
            continue
        log_pa = math.log(ai / n)
        for j in range(t.counts.shape[1]):
            nij = t.counts[i, j]
            if nij == 0:
                continue
            mi += (nij / n) * (math.log(nij / n) - log_pa - math.log(b[j] / n))
    return h_a, h_b, mi


def nmi(t: ContingencyTable) -> float:
    """2*MI / (H(A)+H(B)); both-sides-single-cluster returns 1 by convention."""
    h_a, h_b, mi = _entropies_and_mi(t)
    if h_a + h_b <= _EPS:
        return 1.0
    return 2.0 * mi / (h_a + h_b)


def expected_mi(t: ContingencyTable) -> float:
    """Exact E[MI] under the fixed-marginals (generalized hypergeometric) model.

    Triple sum over cells and feasible cell counts; each hypergeometric weight
    is assembled from lgamma terms for stability.
    """
    n = t.n
    a = t.row_marginals
    b = t.col_marginals
    lg = math.lgamma
    log_n_fact = lg(n + 1)
    emi = 0.0
    for ai in a:
        if ai == 0:
            continue
        base_a = lg(ai + 1) + lg(n - ai + 1)
        for bj in b:
            if bj == 0:
                continue
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                log_w = (
                    base_a
                    + lg(bj + 1)
                    + lg(n - bj + 1)
                    - log_n_fact
                    - lg(nij + 1)
                    - lg(ai - nij + 1)
                    - lg(bj - nij + 1)
                    - lg(n - ai - bj + nij + 1)
                )
                emi += (nij / n) * math.log(n * nij / (ai * bj)) * math.exp(log_w)
    return emi


def ami(t: ContingencyTable) -> float:
    """(MI - E[MI]) / (mean entropy - E[MI]); a zero denominator scores 1 on
    exact agreement of MI with its chance baseline and 0 otherwise."""
    h_a, h_b, mi = _entropies_and_mi(t)
    emi = expected_mi(t)
    denom = 0.5 * (h_a + h_b) - emi
    if abs(denom) <= _EPS:
        return 1.0 if abs(mi - emi) <= _EPS else 0.0
    return (mi - emi) / denom


def _pair_sums(t: ContingencyTable) -> tuple[int, int, int]:
    sum_ij = sum(math.comb(int(x), 2) for x in t.counts.flat)
    sum_a = sum(math.comb(int(x), 2) for x in t.row_marginals)
    sum_b = sum(math.comb(int(x), 2) for x in t.col_marginals)
    return sum_ij, sum_a, sum_b


def rand_index(t: ContingencyTable) -> float:
    """Fraction of entity pairs on which both clusterings agree."""
    if t.n < 2:
        raise ValueError("rand_index needs at least 2 entities")
    sum_ij, sum_a, sum_b = _pair_sums(t)
    total = math.comb(t.n, 2)
    return 1.0 + (2 * sum_ij - sum_a - sum_b) / total


def adjusted_rand_index(t: ContingencyTable) -> float:
    """RI corrected for chance under the fixed-marginals model.

    Computed with exact integers:
      2 * (C(n,2)*sum_ij - sum_a*sum_b) / (C(n,2)*(sum_a+sum_b) - 2*sum_a*sum_b)
    A zero denominator (both sides all-singletons or all-one-cluster) scores 1
    when the numerator is zero too, else 0.
    """
    if t.n < 2:
        raise ValueError("adjusted_rand_index needs at least 2 entities")
    sum_ij, sum_a, sum_b = _pair_sums(t)
    total = math.comb(t.n, 2)
    num = 2 * (total * sum_ij - sum_a * sum_b)
    den = total * (sum_a + sum_b) - 2 * sum_a * sum_b
    if den == 0:
        return 1.0 if num == 0 else 0.0
    return num / den


def f1(t: ContingencyTable) -> float:
    """Harmonic mean of best-match precision and recall.

    precision sums each predicted cluster's largest overlap with a truth
    cluster; recall is the transpose. Not symmetric in (A, B).
    """
    if t.n < 1:
        raise ValueError("f1 needs at least 1 entity")
    precision = float(t.counts.max(axis=0).sum()) / t.n
    recall = float(t.counts.max(axis=1).sum()) / t.n
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def all_metrics(truth: Clustering, pred: Clustering) -> dict[str, float]:
    """All five scores for one set; single-entity sets score 1 everywhere
    (the only clustering of one entity is one singleton on both sides)."""
    if truth.n == 1 and pred.n == 1:
        return {"nmi": 1.0, "ami": 1.0, "ri": 1.0, "ari": 1.0, "f1": 1.0}
    t = contingency(truth, pred)
    return {
        "nmi": nmi(t),
        "ami": ami(t),
        "ri": rand_index(t),
        "ari": adjusted_rand_index(t),
        "f1": f1(t),
    }
