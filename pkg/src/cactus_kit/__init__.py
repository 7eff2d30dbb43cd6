"""Context-aware supervised clustering of small entity sets.

A dependency-light toolkit: a taped-autodiff numeric core, a Transformer
set encoder with pluggable inter-entity attention, margin-based training
objectives with a learnable neutral similarity, average-link agglomerative
inference, exact extrinsic clustering metrics, and data generators for
self-supervised pretraining and synthetic benchmarks.
"""

from .autodiff import GradientTape, Tensor
from .cluster import Clustering, agglomerate, clusterings_equivalent, sweep_threshold
from .data import (
    LabeledSample,
    SelfSupConfig,
    SyntheticConfig,
    generate_selfsup_sample,
    generate_synthetic_benchmark,
    load_dataset,
    parse_llm_clustering,
)
from .encoder import (
    AttentionMode,
    Checkpoint,
    EncoderConfig,
    Entity,
    EntitySet,
    count_attention_logits,
    encode_set,
    tokenize,
)
from .losses import (
    SimilarityMatrix,
    augmented_triplet_loss,
    build_triplets,
    pairwise_bce_loss,
    similarity_matrix,
    triplet_loss,
)
from .metrics import (
    ContingencyTable,
    adjusted_rand_index,
    all_metrics,
    ami,
    contingency,
    expected_mi,
    f1,
    nmi,
    rand_index,
)
from .training import (
    EvalRecord,
    TrainConfig,
    evaluate,
    finetune,
    predict_clustering,
    pretrain,
)

__version__ = "0.1.0"
