"""Average-link agglomerative clustering over pairwise similarities.

The merge loop starts from singletons and repeatedly joins the cluster pair
with the highest average cross-pair similarity while that maximum stays at or
above the stopping threshold. Ties break toward the earliest (lowest-index)
pair in the current cluster ordering, which makes the procedure fully
deterministic. Sets at this scale are tiny, so the implementation favors the
obvious O(n^3) bookkeeping over speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Clustering",
    "MergeStep",
    "MergeTrace",
    "agglomerate",
    "threshold_grid",
    "sweep_threshold",
    "clusterings_equivalent",
]


@dataclass(frozen=True)
class Clustering:
    """Cluster-id assignment over the entities of one set.

    `labels[i]` is the cluster of entity index i; ids are dense 0..K-1 in
    order of first appearance.
    """

    set_id: str
    labels: tuple[int, ...]

    def __post_init__(self):
        if not self.labels:
            raise ValueError("a clustering must cover at least one entity")
        canon = _canonical_labels(self.labels)
        object.__setattr__(self, "labels", canon)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def num_clusters(self) -> int:
        return max(self.labels) + 1

    def clusters(self) -> list[list[int]]:
        groups: list[list[int]] = [[] for _ in range(self.num_clusters)]
        for i, c in enumerate(self.labels):
            groups[c].append(i)
        return groups

    @staticmethod
    def from_groups(set_id: str, groups: Sequence[Sequence[int]], n: int) -> "Clustering":
        labels = [-1] * n
        for c, members in enumerate(groups):
            for i in members:
                if not 0 <= i < n:
                    raise ValueError(f"entity index {i} out of range for n={n}")
                if labels[i] != -1:
                    raise ValueError(f"entity index {i} assigned to more than one cluster")
                labels[i] = c
        missing = [i for i, c in enumerate(labels) if c == -1]
        if missing:
            raise ValueError(f"entities {missing} are not assigned to any cluster")
        return Clustering(set_id, tuple(labels))


def _canonical_labels(labels: Sequence[int]) -> tuple[int, ...]:
    remap: dict[int, int] = {}
    out = []
    for raw in labels:
        if raw not in remap:
            remap[raw] = len(remap)
        out.append(remap[raw])
    return tuple(out)


@dataclass(frozen=True)
class MergeStep:
    members_a: tuple[int, ...]
    members_b: tuple[int, ...]
    link: float


@dataclass(frozen=True)
class MergeTrace:
    """Chronological record of merges; length is n - K for the final K."""

    steps: tuple[MergeStep, ...]


def agglomerate(sim, threshold: float) -> tuple[Clustering, MergeTrace]:
    """Cluster one set by average-link merging down to the threshold.

    `sim` is a SimilarityMatrix (or anything with `.values` / `.n` /
    `.set_id`). Average link between two clusters is the mean similarity over
    all cross pairs of original entities.
    """
    if not -1.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [-1, 1], got {threshold}")
    values = np.asarray(sim.values, dtype=np.float64)
    n = values.shape[0]
    set_id = getattr(sim, "set_id", "")

    members: list[list[int]] = [[i] for i in range(n)]
    # cross-pair similarity sums between current clusters
    link_sum = values.copy()
    np.fill_diagonal(link_sum, 0.0)
    steps: list[MergeStep] = []

    while len(members) > 1:
        best_link = None
        best_pair = None
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                link = link_sum[i, j] / (len(members[i]) * len(members[j]))
                if best_link is None or link > best_link:
                    best_link = link
                    best_pair = (i, j)
        if best_link is None or best_link < threshold:
            break
        i, j = best_pair
        steps.append(MergeStep(tuple(members[i]), tuple(members[j]), float(best_link)))
        members[i] = members[i] + members[j]
        del members[j]
        link_sum[i, :] += link_sum[j, :]
        link_sum[:, i] += link_sum[:, j]
        link_sum = np.delete(np.delete(link_sum, j, axis=0), j, axis=1)

    clustering = Clustering.from_groups(set_id, members, n)
    return clustering, MergeTrace(tuple(steps))


def threshold_grid() -> list[float]:
    """The 21 stopping thresholds -1.0, -0.9, ..., 1.0."""
    return [round(-1.0 + 0.1 * k, 1) for k in range(21)]


def sweep_threshold(scored_sets, criterion: str = "combined") -> tuple[float, list[dict]]:
    """Pick the stopping threshold that maximizes a validation criterion.

    `scored_sets` is a sequence of (similarity_matrix, truth_clustering)
    pairs: similarities are computed once, then every grid threshold is
    scored. The default criterion is the sum of corpus-mean NMI, AMI, RI and
    ARI (the same quantity used for checkpoint selection); ties go to the
    smaller threshold. Returns (best_threshold, per-threshold rows).
    """
    from .metrics import all_metrics  # local import to avoid a cycle

    scored_sets = list(scored_sets)
    if not scored_sets:
        raise ValueError("sweep_threshold needs at least one validation sample")

    rows: list[dict] = []
    best_theta = None
    best_score = None
    for theta in threshold_grid():
        sums = {"nmi": 0.0, "ami": 0.0, "ri": 0.0, "ari": 0.0, "f1": 0.0}
        for sim, truth in scored_sets:
            pred, _ = agglomerate(sim, theta)
            scores = all_metrics(truth, pred)
            for k in sums:
                sums[k] += scores[k]
        means = {k: v / len(scored_sets) for k, v in sums.items()}
        if criterion == "combined":
            score = means["nmi"] + means["ami"] + means["ri"] + means["ari"]
        elif criterion in means:
            score = means[criterion]
        else:
            raise ValueError(f"unknown sweep criterion {criterion!r}")
        rows.append({"theta": theta, "criterion": score, **means})
        if best_score is None or score > best_score:
            best_score = score
            best_theta = theta
    return best_theta, rows


def clusterings_equivalent(a: Clustering, b: Clustering) -> bool:
    """True when both clusterings induce the same co-cluster relation."""
    if a.n != b.n:
        raise ValueError(f"clusterings cover different sets: {a.n} vs {b.n} entities")
    if a.set_id and b.set_id and a.set_id != b.set_id:
        raise ValueError(f"clusterings refer to different sets: {a.set_id!r} vs {b.set_id!r}")
    # canonical first-appearance labels are equal iff the partitions are
    return a.labels == b.labels
