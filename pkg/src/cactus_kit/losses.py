"""Pairwise similarity matrices and the training objectives.

Three objectives share the cosine-similarity matrix of one entity set:

* plain margin (triplet) loss: hinge over (anchor, positive, negative)
  triples, averaged over all triples;
* augmented margin loss: adds per-pair hinges that push intra-cluster
  similarities above, and inter-cluster similarities below, a learnable
  neutral similarity by half a margin, with a single shared normalizer;
* pairwise binary cross-entropy: logistic classification of co-membership
  from scaled similarities.

All three are differentiable through the tape, including the neutral
similarity scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, ZeroNormError
from .cluster import Clustering

__all__ = [
    "BCE_LOGIT_SCALE",
    "SimilarityMatrix",
    "TripletIndex",
    "similarity_matrix",
    "build_triplets",
    "triplet_loss",
    "augmented_triplet_loss",
    "pairwise_bce_loss",
]

# Cosine similarities live in [-1, 1]; the BCE baseline needs a fixed scale
# to turn them into usable logits.
BCE_LOGIT_SCALE = 5.0


class SimilarityMatrix:
    """Symmetric n x n cosine similarities with an exactly-unit diagonal."""

    __slots__ = ("tensor", "set_id")

    def __init__(self, tensor: Tensor, set_id: str = ""):
        if tensor.ndim != 2 or tensor.shape[0] != tensor.shape[1]:
            raise ad.ShapeError(f"similarity matrix must be square, got {tensor.shape}")
        self.tensor = tensor
        self.set_id = set_id

    @property
    def n(self) -> int:
        return self.tensor.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self.tensor.data

    @classmethod
    def from_values(cls, values, set_id: str = "") -> "SimilarityMatrix":
        return cls(Tensor(np.asarray(values, dtype=np.float64)), set_id)

    def validate(self, tol: float = 1e-12) -> None:
        v = self.values
        if not np.allclose(v, v.T, atol=tol, rtol=0):
            raise ValueError("similarity matrix is not symmetric")
        if not np.all(np.diag(v) == 1.0):
            raise ValueError("similarity matrix diagonal must be exactly 1")
        off = v[~np.eye(self.n, dtype=bool)]
        if off.size and (off.min() < -1.0 or off.max() > 1.0):
            raise ValueError("similarities must lie in [-1, 1]")


def similarity_matrix(embeddings: Tensor, set_id: str = "") -> SimilarityMatrix:
    """Cosine similarity between all rows of an [n, d] embedding matrix.

    Differentiable with respect to the embeddings. The diagonal is forced to
    exactly 1 and off-diagonals are clamped into [-1, 1] against rounding.
    """
    if embeddings.ndim != 2:
        raise ad.ShapeError(f"expected [n, d] embeddings, got shape {embeddings.shape}")
    n = embeddings.shape[0]
    norms = np.linalg.norm(embeddings.data, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormError(f"entity {int(zero[0])} has a zero-norm embedding", index=int(zero[0]))
    inv = ad.sqrt((embeddings * embeddings).sum(axis=1, keepdims=True))
    unit = embeddings / inv
    sims = ad.clip(ad.matmul(unit, unit.transpose((1, 0))), -1.0, 1.0)
    eye = np.eye(n)
    fixed = sims * (1.0 - eye) + Tensor(eye)
    return SimilarityMatrix(fixed, set_id)


@dataclass(frozen=True)
class TripletIndex:
    """Index triples and their pair projections for one ground-truth clustering.

    `triplets` holds (anchor, positive, negative) rows; `intra_pairs` and
    `inter_pairs` are the deduplicated ordered projections (anchor, positive)
    and (anchor, negative).
    """

    triplets: np.ndarray
    intra_pairs: np.ndarray
    inter_pairs: np.ndarray

    @property
    def denominator(self) -> int:
        return len(self.triplets) + len(self.intra_pairs) + len(self.inter_pairs)


def build_triplets(clustering: Clustering) -> TripletIndex:
    """Enumerate every (anchor, positive, negative) triple exactly.

    A clustering with a single cluster or with only singletons has no triples
    and therefore empty pair projections as well.
    """
    labels = np.asarray(clustering.labels)
    n = len(labels)
    triplets: list[tuple[int, int, int]] = []
    intra: set[tuple[int, int]] = set()
    inter: set[tuple[int, int]] = set()
    for a in range(n):
        positives = np.flatnonzero((labels == labels[a]))
        negatives = np.flatnonzero(labels != labels[a])
        for p_ in positives:
            if p_ == a:
                continue
            for n_ in negatives:
                triplets.append((a, int(p_), int(n_)))
                intra.add((a, int(p_)))
                inter.add((a, int(n_)))
    return TripletIndex(
        triplets=np.asarray(triplets, dtype=np.int64).reshape(-1, 3),
        intra_pairs=np.asarray(sorted(intra), dtype=np.int64).reshape(-1, 2),
        inter_pairs=np.asarray(sorted(inter), dtype=np.int64).reshape(-1, 2),
    )


def _gather_pairs(sim: SimilarityMatrix, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    flat = sim.tensor.reshape((sim.n * sim.n,))
    return ad.gather_rows(flat, rows * sim.n + cols)


def triplet_loss(sim: SimilarityMatrix, idx: TripletIndex, margin: float = 0.3) -> Tensor:
    """Mean hinge (margin - sim(a,p) + sim(a,n))+ over all triples.

    An empty triple set contributes 0 by convention (callers exclude such
    samples from batch averaging).
    """
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    if len(idx.triplets) == 0:
        return Tensor(0.0)
    s_ap = _gather_pairs(sim, idx.triplets[:, 0], idx.triplets[:, 1])
    s_an = _gather_pairs(sim, idx.triplets[:, 0], idx.triplets[:, 2])
    return ad.relu(margin - s_ap + s_an).mean()


def augmented_triplet_loss(sim: SimilarityMatrix, idx: TripletIndex,
                           margin: float = 0.3, neutral: Tensor | None = None) -> Tensor:
    """Margin loss with a learnable neutral anchor for margin locations.

    Adds half-margin hinges pushing intra-cluster similarities above the
    neutral similarity and inter-cluster ones below it; all three sums share
    the normalizer |T| + |P_intra| + |P_inter|. Differentiable with respect
    to both the similarities and the neutral scalar.
    """
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    if neutral is None:
        neutral = Tensor(0.0)
    if idx.denominator == 0:
        return Tensor(0.0)
    half = margin / 2.0
    total = Tensor(0.0)
    if len(idx.triplets):
        s_ap = _gather_pairs(sim, idx.triplets[:, 0], idx.triplets[:, 1])
        s_an = _gather_pairs(sim, idx.triplets[:, 0], idx.triplets[:, 2])
        total = total + ad.relu(margin - s_ap + s_an).sum()
    if len(idx.intra_pairs):
        s_ap = _gather_pairs(sim, idx.intra_pairs[:, 0], idx.intra_pairs[:, 1])
        total = total + ad.relu(half - s_ap + neutral).sum()
    if len(idx.inter_pairs):
        s_an = _gather_pairs(sim, idx.inter_pairs[:, 0], idx.inter_pairs[:, 1])
        total = total + ad.relu(half - neutral + s_an).sum()
    return total * (1.0 / idx.denominator)


def pairwise_bce_loss(sim: SimilarityMatrix, clustering: Clustering,
                      logit_scale: float = BCE_LOGIT_SCALE) -> Tensor:
    """Mean binary cross-entropy over unordered pairs.

    Each pair's logit is `logit_scale * sim`; the target is the co-cluster
    indicator. Uses the softplus form, so saturated similarities are stable.
    """
    n = sim.n
    if n < 2:
        raise ValueError("pairwise_bce_loss needs at least 2 entities")
    rows, cols = np.triu_indices(n, k=1)
    labels = np.asarray(clustering.labels)
    targets = (labels[rows] == labels[cols]).astype(np.float64)
    z = _gather_pairs(sim, rows, cols) * logit_scale
    return (ad.softplus(z) - z * Tensor(targets)).mean()
