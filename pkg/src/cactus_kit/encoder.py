"""Context-aware entity-set encoder.

An entity set is tokenized with a deterministic hash tokenizer and run
through a small pre-norm Transformer whose attention layer can be wired in
five ways across entity boundaries:

* ``nia``       - tokens attend only within their own entity.
* ``sia-hid``   - tokens also attend to one pooled representative per other
                  entity, built by mean-pooling that entity's block-input
                  hidden states and passing the pooled vector through the
                  same pre-attention norm and key/value projections a token
                  would see.
* ``sia-kv``    - keys/values are computed per token first and then
                  mean-pooled per entity. The pre-norm is applied per token,
                  so this is not the same map as ``sia-hid`` once entities
                  have more than one token.
* ``sia-first`` - each entity's first token acts as its representative.
* ``fia``       - full token-level attention across all entities.

Intra-entity attention carries a learned bucketed relative-position bias
(two-sided T5-style buckets: exact small offsets, log-spaced beyond, clamped
at a maximum distance). Cross-entity attention carries no positional signal,
which is what makes the encoder equivariant to entity order. Intra and inter
logits share a single softmax denominator per query token. Final-layer token
states are mean-pooled per entity into one embedding per entity.
"""

from __future__ import annotations

import json
import math
import re
import threading
from dataclasses import dataclass, field, asdict
from enum import Enum
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "ConfigError",
    "TokenBudgetError",
    "EMPTY_TOKEN_ID",
    "tokenize",
    "Entity",
    "EntitySet",
    "AttentionMode",
    "EncoderConfig",
    "Checkpoint",
    "encode_set",
    "count_attention_logits",
    "AttentionStats",
    "attention_stats",
]


class ConfigError(ValueError):
    """Invalid encoder configuration or unknown attention mode."""


class TokenBudgetError(ValueError):
    def __init__(self, measured: int, budget: int):
        super().__init__(f"entity set has {measured} tokens, exceeding the budget of {budget}")
        self.measured = measured
        self.budget = budget


# ---------------------------------------------------------------------------
# tokenizer

EMPTY_TOKEN_ID = 0
_WORD_RE = re.compile(r"\w+", re.UNICODE)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a64(word: str) -> int:
    h = _FNV_OFFSET
    for byte in word.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def tokenize(text: str, vocab_size: int) -> list[int]:
    """Deterministic hash tokenizer.

    Lowercases, splits on non-word characters, and maps each word into
    [1, vocab_size) with FNV-1a; id 0 is reserved for empty text.
    """
    if vocab_size < 2:
        raise ConfigError(f"vocab_size must be >= 2, got {vocab_size}")
    words = _WORD_RE.findall(text.lower())
    if not words:
        return [EMPTY_TOKEN_ID]
    return [1 + _fnv1a64(w) % (vocab_size - 1) for w in words]


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Entity:
    id: str
    text: str
    tokens: tuple[int, ...] | None = None


@dataclass(frozen=True)
class EntitySet:
    set_id: str
    entities: tuple[Entity, ...]

    def __post_init__(self):
        if not self.entities:
            raise ValueError(f"entity set {self.set_id!r} is empty")
        seen = set()
        for e in self.entities:
            if e.id in seen:
                raise ValueError(f"duplicate entity id {e.id!r} in set {self.set_id!r}")
            seen.add(e.id)

    def __len__(self) -> int:
        return len(self.entities)


class AttentionMode(str, Enum):
    NIA = "nia"
    SIA_HID_MEAN = "sia-hid"
    SIA_KV_MEAN = "sia-kv"
    SIA_FIRST = "sia-first"
    FIA = "fia"

    @classmethod
    def parse(cls, value: "AttentionMode | str") -> "AttentionMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown attention mode {value!r}; expected one of: {valid}") from None


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 4096
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 64
    attention_mode: AttentionMode = AttentionMode.SIA_HID_MEAN
    rel_pos_buckets: int = 16
    max_rel_distance: int = 32
    max_set_tokens: int = 2048
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attention_mode", AttentionMode.parse(self.attention_mode))
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "ffn_dim",
                     "rel_pos_buckets", "max_rel_distance", "max_set_tokens"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2 (id 0 is reserved)")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.rel_pos_buckets < 2 or self.rel_pos_buckets % 2 != 0:
            raise ConfigError("rel_pos_buckets must be an even number >= 2 (two-sided buckets)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attention_mode"] = self.attention_mode.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "EncoderConfig":
        return cls(**{**d, "attention_mode": AttentionMode.parse(d["attention_mode"])})


# ---------------------------------------------------------------------------
# checkpoint

CHECKPOINT_FORMAT = "cactus-kit-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Encoder configuration plus every learnable tensor, by name.

    Includes the learnable neutral similarity used by the augmented margin
    loss. Serialization is a single-line JSON header followed by raw
    little-endian float64 blobs, so a round trip is bit-exact.
    """

    config: EncoderConfig
    params: dict[str, Tensor]
    meta: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: EncoderConfig) -> "Checkpoint":
        rng = np.random.default_rng(config.seed)
        d = config.d_model
        scale = 1.0 / math.sqrt(d)
        params: dict[str, Tensor] = {}

        def par(name: str, values: np.ndarray) -> None:
            params[name] = ad.parameter(np.asarray(values, dtype=np.float64), name)

        par("token_embedding", rng.normal(0.0, scale, (config.vocab_size, d)))
        for layer in range(config.n_layers):
            p = f"layer{layer}."
            par(p + "attn_norm_scale", np.ones(d))
            par(p + "wq", rng.normal(0.0, scale, (d, d)))
            par(p + "wk", rng.normal(0.0, scale, (d, d)))
            par(p + "wv", rng.normal(0.0, scale, (d, d)))
            par(p + "wo", rng.normal(0.0, scale, (d, d)))
            par(p + "rel_bias", rng.normal(0.0, 0.05, (config.rel_pos_buckets, config.n_heads)))
            par(p + "ffn_norm_scale", np.ones(d))
            par(p + "ffn_w1", rng.normal(0.0, scale, (d, config.ffn_dim)))
            par(p + "ffn_b1", np.zeros(config.ffn_dim))
            par(p + "ffn_w2", rng.normal(0.0, 1.0 / math.sqrt(config.ffn_dim), (config.ffn_dim, d)))
            par(p + "ffn_b2", np.zeros(d))
        par("final_norm_scale", np.ones(d))
        par("neutral_similarity", np.zeros(()))
        return cls(config=config, params=params, meta={})

    @property
    def neutral_similarity(self) -> Tensor:
        return self.params["neutral_similarity"]

    def clone(self) -> "Checkpoint":
        params = {k: ad.parameter(v.data.copy(), k) for k, v in self.params.items()}
        return Checkpoint(config=self.config, params=params, meta=json.loads(json.dumps(self.meta)))

    def save(self, path) -> None:
        order = sorted(self.params)
        header = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "meta": self.meta,
            "tensors": [
                {"name": k, "shape": list(self.params[k].shape), "dtype": "<f8"} for k in order
            ],
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
            fh.write(b"\n")
            for k in order:
                fh.write(np.ascontiguousarray(self.params[k].data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            header_line = fh.readline()
            try:
                header = json.loads(header_line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as err:
                raise ValueError(f"{path}: not a checkpoint file ({err})") from None
            if header.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: unexpected format {header.get('format')!r}")
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
            config = EncoderConfig.from_dict(header["config"])
            params: dict[str, Tensor] = {}
            for spec in header["tensors"]:
                shape = tuple(spec["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(count * 8)
                if len(raw) != count * 8:
                    raise ValueError(f"{path}: truncated tensor data for {spec['name']!r}")
                arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
                params[spec["name"]] = ad.parameter(arr, spec["name"])
        return cls(config=config, params=params, meta=header.get("meta", {}))


# ---------------------------------------------------------------------------
# relative-position buckets


def _relative_bucket(offset: int, n_buckets: int, max_distance: int) -> int:
    half = n_buckets // 2
    bucket = half if offset > 0 else 0
    a = abs(offset)
    exact = max(1, half // 2)
    if a < exact:
        return bucket + a
    if max_distance <= exact:
        return bucket + half - 1
    log_pos = exact + int(
        math.log(a / exact) / math.log(max_distance / exact) * (half - exact)
    )
    return bucket + min(log_pos, half - 1)


@lru_cache(maxsize=256)
def _bucket_matrix(length: int, n_buckets: int, max_distance: int) -> np.ndarray:
    offsets = np.arange(length)[None, :] - np.arange(length)[:, None]
    out = np.empty((length, length), dtype=np.int64)
    for q in range(length):
        for k in range(length):
            out[q, k] = _relative_bucket(int(offsets[q, k]), n_buckets, max_distance)
    return out


# ---------------------------------------------------------------------------
# instrumentation


class AttentionStats:
    """Counts scoring work done by attention layers.

    `logit_entries` counts every attention logit evaluated (across layers and
    heads). Byte accounting models the inference-time lifetime of the scoring
    buffers (logits plus normalized weights): buffers are released as soon as
    the weighted sum for their block is formed.
    """

    __slots__ = ("logit_entries", "current_bytes", "peak_bytes")

    def __init__(self):
        self.logit_entries = 0
        self.current_bytes = 0
        self.peak_bytes = 0

    def count(self, entries: int) -> None:
        self.logit_entries += entries

    def alloc(self, nbytes: int) -> None:
        self.current_bytes += nbytes
        if self.current_bytes > self.peak_bytes:
            self.peak_bytes = self.current_bytes

    def release(self, nbytes: int) -> None:
        self.current_bytes -= nbytes


_STATS_LOCAL = threading.local()


class attention_stats:
    """Context manager collecting AttentionStats for encodes inside it."""

    def __enter__(self) -> AttentionStats:
        stack = getattr(_STATS_LOCAL, "stack", None)
        if stack is None:
            stack = _STATS_LOCAL.stack = []
        self._stats = AttentionStats()
        stack.append(self._stats)
        return self._stats

    def __exit__(self, exc_type, exc, tb) -> None:
        _STATS_LOCAL.stack.pop()


def _active_stats() -> AttentionStats | None:
    stack = getattr(_STATS_LOCAL, "stack", None)
    return stack[-1] if stack else None


# ---------------------------------------------------------------------------
# forward pass


def count_attention_logits(lengths: Sequence[int], mode: AttentionMode | str) -> int:
    """Exact attention logits per layer per head for one entity set.

    nia: sum L_i^2;  sia-*: sum L_i * (L_i + N - 1);  fia: (sum L_i)^2.
    """
    mode = AttentionMode.parse(mode)
    lengths = list(lengths)
    if not lengths or any(l < 1 for l in lengths):
        raise ValueError("need at least one entity, all token counts >= 1")
    n = len(lengths)
    if mode is AttentionMode.NIA:
        return sum(l * l for l in lengths)
    if mode is AttentionMode.FIA:
        total = sum(lengths)
        return total * total
    return sum(l * (l + n - 1) for l in lengths)


def _rms_norm(x: Tensor, scale: Tensor) -> Tensor:
    ms = (x * x).mean(axis=-1, keepdims=True)
    return x / ad.sqrt(ms + 1e-8) * scale


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    t, d = x.shape
    return x.reshape((t, n_heads, d // n_heads)).transpose((1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    h, t, dh = x.shape
    return x.transpose((1, 0, 2)).reshape((t, h * dh))


def _drop_row(x: Tensor, axis: int, index: int, total: int) -> Tensor:
    if index == 0:
        return ad.slice_axis(x, axis, 1, total)
    if index == total - 1:
        return ad.slice_axis(x, axis, 0, total - 1)
    return ad.concat(
        [ad.slice_axis(x, axis, 0, index), ad.slice_axis(x, axis, index + 1, total)], axis=axis
    )


def _attention(x_resid: Tensor, h: Tensor, segments: list[tuple[int, int]],
               mode: AttentionMode, p: Mapping[str, Tensor], prefix: str,
               cfg: EncoderConfig) -> Tensor:
    stats = _active_stats()
    n_heads = cfg.n_heads
    n = len(segments)
    total = h.shape[0]

    q = _split_heads(h @ p[prefix + "wq"], n_heads)
    k = _split_heads(h @ p[prefix + "wk"], n_heads)
    v = _split_heads(h @ p[prefix + "wv"], n_heads)

    reps_k = reps_v = None
    if mode in (AttentionMode.SIA_HID_MEAN, AttentionMode.SIA_KV_MEAN, AttentionMode.SIA_FIRST) and n > 1:
        if mode is AttentionMode.SIA_HID_MEAN:
            pooled = ad.concat(
                [ad.mean_pool(ad.slice_axis(x_resid, 0, s, e)).reshape((1, cfg.d_model))
                 for s, e in segments]
            )
            normed = _rms_norm(pooled, p[prefix + "attn_norm_scale"])
            reps_k = _split_heads(normed @ p[prefix + "wk"], n_heads)
            reps_v = _split_heads(normed @ p[prefix + "wv"], n_heads)
        elif mode is AttentionMode.SIA_KV_MEAN:
            reps_k = ad.concat(
                [ad.slice_axis(k, 1, s, e).mean(axis=1, keepdims=True) for s, e in segments],
                axis=1,
            )
            reps_v = ad.concat(
                [ad.slice_axis(v, 1, s, e).mean(axis=1, keepdims=True) for s, e in segments],
                axis=1,
            )
        else:  # first token as representative
            reps_k = ad.concat([ad.slice_axis(k, 1, s, s + 1) for s, _ in segments], axis=1)
            reps_v = ad.concat([ad.slice_axis(v, 1, s, s + 1) for s, _ in segments], axis=1)

    bias_table = p[prefix + "rel_bias"]
    outputs = []
    for i, (s, e) in enumerate(segments):
        length = e - s
        qi = ad.slice_axis(q, 1, s, e)
        ki = ad.slice_axis(k, 1, s, e)
        vi = ad.slice_axis(v, 1, s, e)

        buckets = _bucket_matrix(length, cfg.rel_pos_buckets, cfg.max_rel_distance)
        bias = ad.gather_rows(bias_table, buckets.reshape(-1))
        bias = bias.reshape((length, length, n_heads)).transpose((2, 0, 1))
        logits_intra = ad.matmul(qi, ki.transpose((0, 2, 1))) + bias
        if stats:
            stats.count(logits_intra.size)
            stats.alloc(logits_intra.data.nbytes)

        logits = logits_intra
        values = vi
        inter_nbytes = 0
        if mode is AttentionMode.FIA and n > 1:
            k_other = _drop_tokens(k, s, e, total)
            v_other = _drop_tokens(v, s, e, total)
            logits_inter = ad.matmul(qi, k_other.transpose((0, 2, 1)))
            if stats:
                stats.count(logits_inter.size)
                stats.alloc(logits_inter.data.nbytes)
                inter_nbytes = logits_inter.data.nbytes
            logits = ad.concat([logits_intra, logits_inter], axis=2)
            values = ad.concat([vi, v_other], axis=1)
        elif reps_k is not None:
            k_rep = _drop_row(reps_k, 1, i, n)
            v_rep = _drop_row(reps_v, 1, i, n)
            logits_inter = ad.matmul(qi, k_rep.transpose((0, 2, 1)))
            if stats:
                stats.count(logits_inter.size)
                stats.alloc(logits_inter.data.nbytes)
                inter_nbytes = logits_inter.data.nbytes
            logits = ad.concat([logits_intra, logits_inter], axis=2)
            values = ad.concat([vi, v_rep], axis=1)

        if stats and logits is not logits_intra:
            stats.alloc(logits.data.nbytes)
        weights = ad.softmax_rows(logits)
        if stats:
            stats.alloc(weights.data.nbytes)
        out_i = ad.matmul(weights, values)
        if stats:
            stats.release(logits_intra.data.nbytes + inter_nbytes + weights.data.nbytes)
            if logits is not logits_intra:
                stats.release(logits.data.nbytes)
        outputs.append(_merge_heads(out_i))

    merged = outputs[0] if len(outputs) == 1 else ad.concat(outputs)
    return merged @ p[prefix + "wo"]


def _drop_tokens(x: Tensor, start: int, stop: int, total: int) -> Tensor:
    if start == 0:
        return ad.slice_axis(x, 1, stop, total)
    if stop == total:
        return ad.slice_axis(x, 1, 0, start)
    return ad.concat(
        [ad.slice_axis(x, 1, 0, start), ad.slice_axis(x, 1, stop, total)], axis=1
    )


def _entity_tokens(entity: Entity, cfg: EncoderConfig) -> list[int]:
    tokens = list(entity.tokens) if entity.tokens is not None else tokenize(entity.text, cfg.vocab_size)
    if not tokens:
        raise ValueError(f"entity {entity.id!r} has no tokens")
    bad = [t for t in tokens if not 0 <= t < cfg.vocab_size]
    if bad:
        raise ValueError(f"entity {entity.id!r} has token ids {bad} outside vocab of {cfg.vocab_size}")
    return tokens


def encode_set(entity_set: EntitySet, checkpoint: Checkpoint) -> Tensor:
    """One context-aware embedding per entity, shape [len(set), d_model].

    Row order matches entity order. Runs under the active gradient tape, if
    any; without a tape this is a plain forward pass.
    """
    cfg = checkpoint.config
    p = checkpoint.params
    mode = cfg.attention_mode

    token_lists = [_entity_tokens(e, cfg) for e in entity_set.entities]
    total = sum(len(t) for t in token_lists)
    if total > cfg.max_set_tokens:
        raise TokenBudgetError(total, cfg.max_set_tokens)

    segments: list[tuple[int, int]] = []
    offset = 0
    flat: list[int] = []
    for toks in token_lists:
        segments.append((offset, offset + len(toks)))
        offset += len(toks)
        flat.extend(toks)

    x = ad.gather_rows(p["token_embedding"], np.asarray(flat, dtype=np.int64))
    for layer in range(cfg.n_layers):
        prefix = f"layer{layer}."
        h = _rms_norm(x, p[prefix + "attn_norm_scale"])
        x = x + _attention(x, h, segments, mode, p, prefix, cfg)
        h2 = _rms_norm(x, p[prefix + "ffn_norm_scale"])
        ffn = ad.relu(h2 @ p[prefix + "ffn_w1"] + p[prefix + "ffn_b1"]) @ p[prefix + "ffn_w2"] + p[prefix + "ffn_b2"]
        x = x + ffn

    x = _rms_norm(x, p["final_norm_scale"])
    rows = [ad.mean_pool(ad.slice_axis(x, 0, s, e)).reshape((1, cfg.d_model)) for s, e in segments]
    return rows[0] if len(rows) == 1 else ad.concat(rows)
