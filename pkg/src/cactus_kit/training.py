"""Optimization loop, checkpoint selection, and evaluation orchestration.

Training processes one entity set per backward pass and accumulates
gradients up to the configured batch size before an optimizer step. Samples
whose clustering yields no margin constraints (single cluster, or all
singletons) contribute nothing and are excluded from the batch average.
Checkpoint selection keeps the epoch with the best combined (sum) NMI, AMI,
RI and ARI on the validation split, with the stopping threshold re-swept
each epoch.

All randomness flows from one root seed through named derivation, so adding
a new consumer never shifts an existing one.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GradientTape, Tensor
from .cluster import Clustering, agglomerate, sweep_threshold
from .data import LabeledSample, SelfSupConfig, generate_selfsup_sample
from .encoder import Checkpoint, Entity, EntitySet, encode_set
from .losses import (
    SimilarityMatrix,
    augmented_triplet_loss,
    build_triplets,
    pairwise_bce_loss,
    similarity_matrix,
    triplet_loss,
)
from .metrics import all_metrics

__all__ = [
    "LOSS_KINDS",
    "THREADS_ENV_VAR",
    "DivergenceError",
    "TrainConfig",
    "SetMetrics",
    "EvalRecord",
    "EpochRecord",
    "derive_seed",
    "worker_count",
    "optimizer_step",
    "OptimizerState",
    "pretrain",
    "finetune",
    "evaluate",
    "predict_clustering",
]

LOSS_KINDS = ("triplet", "aug-triplet", "bce")
THREADS_ENV_VAR = "CACTUS_KIT_THREADS"


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


def derive_seed(root: int, name: str) -> int:
    digest = hashlib.sha256(f"{root}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    eval_batch_size: int = 16
    epochs: int = 10
    pretrain_batches: int = 20_000
    loss: str = "aug-triplet"
    margin: float = 0.3
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("learning rate and batch sizes must be positive")
        if self.epochs < 0 or self.pretrain_batches < 0:
            raise ValueError("epochs and pretrain_batches must be non-negative")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
                   state: OptimizerState, cfg: TrainConfig) -> OptimizerState:
    """Adam-style adaptive update (or plain gradient descent) in place."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if cfg.optimizer == "sgd":
            p.data = p.data - cfg.learning_rate * g
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        p.data = p.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return state


# ---------------------------------------------------------------------------
# per-sample loss


def _sample_loss(checkpoint: Checkpoint, sample: LabeledSample, loss_kind: str,
                 margin: float) -> Tensor | None:
    """Loss for one entity set, or None when the sample carries no constraint."""
    idx = build_triplets(sample.clustering)
    if loss_kind in ("triplet", "aug-triplet"):
        if idx.denominator == 0:
            return None
    elif len(sample.entity_set) < 2:
        return None
    emb = encode_set(sample.entity_set, checkpoint)
    sim = similarity_matrix(emb, set_id=sample.entity_set.set_id)
    if loss_kind == "triplet":
        return triplet_loss(sim, idx, margin)
    if loss_kind == "aug-triplet":
        return augmented_triplet_loss(sim, idx, margin, checkpoint.neutral_similarity)
    return pairwise_bce_loss(sim, sample.clustering)


def _train_batch(checkpoint: Checkpoint, samples: Sequence[LabeledSample],
                 cfg: TrainConfig, state: OptimizerState, loss_kind: str) -> float | None:
    """One optimizer step over a batch; returns the mean contributing loss."""
    ad.zero_grads(checkpoint.params)
    losses: list[float] = []
    for sample in samples:
        with GradientTape(checkpoint.params) as tape:
            loss = _sample_loss(checkpoint, sample, loss_kind, cfg.margin)
            if loss is None:
                continue
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss on set {sample.entity_set.set_id!r}"
                )
            losses.append(value)
            tape.backward(loss)
    if not losses:
        return None
    scale = 1.0 / len(losses)
    grads = {name: p.grad * scale for name, p in checkpoint.params.items() if p.grad is not None}
    optimizer_step(checkpoint.params, grads, state, cfg)
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# pretraining


def pretrain(checkpoint: Checkpoint, universe: Sequence[Entity],
             selfsup: SelfSupConfig, cfg: TrainConfig,
             log: Callable[[dict], None] | None = None) -> Checkpoint:
    """Self-supervised pretraining on generated word-drop clusterings.

    Always optimizes the augmented margin loss, whatever the finetuning loss
    is. Zero batches leave the parameters bit-exactly unchanged.
    """
    if not universe:
        raise ValueError("pretraining universe must be nonempty")
    universe = list(universe)
    state = OptimizerState()
    for batch_no in range(cfg.pretrain_batches):
        rng = np.random.default_rng(derive_seed(cfg.seed, f"pretrain-batch-{batch_no}"))
        samples = [
            generate_selfsup_sample(universe, selfsup, rng, set_id=f"selfsup-{batch_no}-{j}")
            for j in range(cfg.batch_size)
        ]
        mean_loss = _train_batch(checkpoint, samples, cfg, state, "aug-triplet")
        if log is not None and mean_loss is not None:
            log({"phase": "pretrain", "batch": batch_no, "loss": mean_loss})
    return checkpoint


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class SetMetrics:
    set_id: str
    n: int
    k_true: int
    k_pred: int
    nmi: float
    ami: float
    ri: float
    ari: float
    f1: float

    def to_dict(self) -> dict:
        return {
            "set_id": self.set_id, "n": self.n,
            "k_true": self.k_true, "k_pred": self.k_pred,
            "nmi": self.nmi, "ami": self.ami, "ri": self.ri,
            "ari": self.ari, "f1": self.f1,
        }


@dataclass(frozen=True)
class EvalRecord:
    theta: float
    per_set: tuple[SetMetrics, ...]
    means: dict[str, float]
    failed: tuple[str, ...] = ()
    epoch: int | None = None

    @property
    def combined(self) -> float:
        return self.means["nmi"] + self.means["ami"] + self.means["ri"] + self.means["ari"]


def _score_one(sample: LabeledSample, checkpoint: Checkpoint, theta: float,
               encode_fn: Callable) -> SetMetrics:
    eset = sample.entity_set
    if len(eset) == 1:
        pred = Clustering(eset.set_id, (0,))
    else:
        emb = encode_fn(eset, checkpoint)
        sim = similarity_matrix(emb, set_id=eset.set_id)
        pred, _ = agglomerate(sim, theta)
    scores = all_metrics(sample.clustering, pred)
    return SetMetrics(
        set_id=eset.set_id, n=len(eset),
        k_true=sample.clustering.num_clusters, k_pred=pred.num_clusters,
        **scores,
    )


def evaluate(checkpoint: Checkpoint, samples: Sequence[LabeledSample], theta: float,
             encode_fn: Callable | None = None) -> EvalRecord:
    """Encode, cluster at `theta`, and score every sample.

    Failed sets are reported and excluded from the corpus means. Per-set
    records come back sorted by set_id so aggregate arithmetic is independent
    of execution order (including the threaded path).
    """
    if not -1.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [-1, 1], got {theta}")
    encode_fn = encode_fn or encode_set
    samples = list(samples)

    def run(sample: LabeledSample):
        try:
            return _score_one(sample, checkpoint, theta, encode_fn), None
        except Exception as err:  # noqa: BLE001 - per-set isolation is the contract
            return None, (sample.entity_set.set_id, str(err))

    workers = worker_count()
    if workers > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, samples))
    else:
        results = [run(s) for s in samples]

    per_set = sorted((r for r, _ in results if r is not None), key=lambda r: r.set_id)
    failed = tuple(sorted(e[0] for _, e in results if e is not None))
    if not per_set:
        means = {k: float("nan") for k in ("nmi", "ami", "ri", "ari", "f1")}
    else:
        means = {
            k: float(np.mean([getattr(r, k) for r in per_set]))
            for k in ("nmi", "ami", "ri", "ari", "f1")
        }
    return EvalRecord(theta=theta, per_set=tuple(per_set), means=means, failed=failed)


def _scored_validation(checkpoint: Checkpoint, samples: Sequence[LabeledSample],
                       encode_fn: Callable) -> list[tuple[SimilarityMatrix, Clustering]]:
    """Precompute similarity matrices once so the sweep only re-clusters."""
    scored = []
    for sample in samples:
        eset = sample.entity_set
        if len(eset) == 1:
            sim = SimilarityMatrix.from_values(np.ones((1, 1)), set_id=eset.set_id)
        else:
            sim = similarity_matrix(encode_fn(eset, checkpoint), set_id=eset.set_id)
        scored.append((sim, sample.clustering))
    return scored


def sweep_validation_threshold(checkpoint: Checkpoint, samples: Sequence[LabeledSample],
                               encode_fn: Callable | None = None,
                               criterion: str = "combined") -> tuple[float, list[dict]]:
    """Encode the validation split once and sweep all 21 stopping thresholds."""
    encode_fn = encode_fn or encode_set
    return sweep_threshold(_scored_validation(checkpoint, samples, encode_fn), criterion)


# ---------------------------------------------------------------------------
# finetuning


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float | None
    theta: float
    means: dict[str, float]
    combined: float


def finetune(checkpoint: Checkpoint, train: Sequence[LabeledSample],
             valid: Sequence[LabeledSample], cfg: TrainConfig,
             log: Callable[[dict], None] | None = None) -> tuple[Checkpoint, list[EpochRecord]]:
    """Optimize the configured loss; keep the best-validation checkpoint.

    Per epoch: shuffle the training sets, take batched optimizer steps, sweep
    the stopping threshold on the validation split, and score it. The
    checkpoint with the highest combined NMI+AMI+RI+ARI is returned (ties go
    to the earlier epoch).
    """
    if not train or not valid:
        raise ValueError("finetune needs nonempty train and valid splits")
    train = list(train)
    state = OptimizerState()
    history: list[EpochRecord] = []
    best: tuple[float, Checkpoint] | None = None

    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng(derive_seed(cfg.seed, f"epoch-{epoch}-shuffle"))
        order = rng.permutation(len(train))
        epoch_losses: list[float] = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            mean_loss = _train_batch(checkpoint, batch, cfg, state, cfg.loss)
            if mean_loss is not None:
                epoch_losses.append(mean_loss)
        theta, _ = sweep_validation_threshold(checkpoint, valid)
        record = evaluate(checkpoint, valid, theta)
        epoch_rec = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(epoch_losses)) if epoch_losses else None,
            theta=theta,
            means=record.means,
            combined=record.combined,
        )
        history.append(epoch_rec)
        if log is not None:
            log({"phase": "finetune", "epoch": epoch, "loss": epoch_rec.train_loss,
                 "theta": theta, **{f"valid_{k}": v for k, v in record.means.items()}})
        if best is None or epoch_rec.combined > best[0]:
            best = (epoch_rec.combined, checkpoint.clone())

    if best is None:  # zero epochs: return the input checkpoint unchanged
        return checkpoint, history
    return best[1], history


def predict_clustering(checkpoint: Checkpoint, entity_set: EntitySet,
                       theta: float) -> Clustering:
    """Encode one set and cluster it at the given stopping threshold."""
    if len(entity_set) == 1:
        return Clustering(entity_set.set_id, (0,))
    emb = encode_set(entity_set, checkpoint)
    sim = similarity_matrix(emb, set_id=entity_set.set_id)
    pred, _ = agglomerate(sim, theta)
    return pred
