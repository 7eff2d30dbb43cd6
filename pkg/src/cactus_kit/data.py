"""Dataset ingestion and generation.

File formats are line-delimited JSON with a leading header line carrying
`schema` and `version`. A labeled dataset record looks like::

    {"set_id": "s1",
     "entities": [{"id": "a", "text": "glue stick"}, ...],
     "clusters": [["a", "b"], ["c"]],
     "split": "train"}            # optional pre-assigned split

Besides loading, this module parses free-form clustering text into labeled
samples, generates self-supervised samples by grouping word-drop
transformations of seed entities, and synthesizes a topic-structured
benchmark whose sets contain cross-topic homonym words (so that encoders
without inter-entity attention face genuine ambiguity).
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

import numpy as np

from .cluster import Clustering
from .encoder import Entity, EntitySet

__all__ = [
    "DATASET_SCHEMA",
    "ENTITY_SETS_SCHEMA",
    "UNIVERSE_SCHEMA",
    "RAW_OUTPUTS_SCHEMA",
    "FORMAT_VERSION",
    "DatasetFormatError",
    "LabeledSample",
    "SplitSpec",
    "Splits",
    "load_dataset",
    "load_entity_sets",
    "load_universe",
    "load_raw_outputs",
    "write_dataset",
    "write_entity_sets",
    "write_universe",
    "ParseResult",
    "parse_llm_clustering",
    "SelfSupConfig",
    "generate_selfsup_sample",
    "SyntheticConfig",
    "generate_synthetic_benchmark",
]

logger = logging.getLogger(__name__)

DATASET_SCHEMA = "cactus-kit/labeled-sets"
ENTITY_SETS_SCHEMA = "cactus-kit/entity-sets"
UNIVERSE_SCHEMA = "cactus-kit/universe"
RAW_OUTPUTS_SCHEMA = "cactus-kit/raw-outputs"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """A dataset file violates the schema; message carries the line number."""


@dataclass(frozen=True)
class LabeledSample:
    entity_set: EntitySet
    clustering: Clustering

    def __post_init__(self):
        if self.clustering.n != len(self.entity_set):
            raise ValueError(
                f"set {self.entity_set.set_id!r}: clustering covers {self.clustering.n} "
                f"entities but the set has {len(self.entity_set)}"
            )


# ---------------------------------------------------------------------------
# line-delimited IO


def _iter_records(path, expected_schema: str):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({err.msg})") from None
            if not isinstance(record, dict):
                raise DatasetFormatError(f"{path}:{lineno}: expected a JSON object")
            if "schema" in record:
                if lineno != 1:
                    raise DatasetFormatError(f"{path}:{lineno}: header line must come first")
                if record["schema"] != expected_schema:
                    raise DatasetFormatError(
                        f"{path}:1: schema {record['schema']!r} does not match expected {expected_schema!r}"
                    )
                if record.get("version") != FORMAT_VERSION:
                    raise DatasetFormatError(
                        f"{path}:1: unsupported format version {record.get('version')!r}"
                    )
                continue
            yield lineno, record


def _entity_from_record(raw, path, lineno) -> Entity:
    if not isinstance(raw, dict) or "id" not in raw or "text" not in raw:
        raise DatasetFormatError(f"{path}:{lineno}: each entity needs 'id' and 'text'")
    return Entity(id=str(raw["id"]), text=str(raw["text"]))


def _sample_from_record(record, path, lineno) -> tuple[LabeledSample, str | None]:
    for key in ("set_id", "entities", "clusters"):
        if key not in record:
            raise DatasetFormatError(f"{path}:{lineno}: missing field {key!r}")
    entities = tuple(_entity_from_record(e, path, lineno) for e in record["entities"])
    try:
        eset = EntitySet(set_id=str(record["set_id"]), entities=entities)
    except ValueError as err:
        raise DatasetFormatError(f"{path}:{lineno}: {err}") from None
    index = {e.id: i for i, e in enumerate(entities)}
    groups: list[list[int]] = []
    for cluster in record["clusters"]:
        group = []
        for eid in cluster:
            if eid not in index:
                raise DatasetFormatError(
                    f"{path}:{lineno}: cluster references unknown entity {eid!r}"
                )
            group.append(index[eid])
        groups.append(group)
    try:
        clustering = Clustering.from_groups(eset.set_id, groups, len(entities))
    except ValueError as err:
        raise DatasetFormatError(f"{path}:{lineno}: {err}") from None
    split = record.get("split")
    if split is not None and split not in ("train", "valid", "test"):
        raise DatasetFormatError(f"{path}:{lineno}: unknown split {split!r}")
    return LabeledSample(eset, clustering), split


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic seeded split; sizes shrink proportionally when the file
    is too small to give the requested test/valid sizes and still keep at
    least half the data for training."""

    test_size: int = 3000
    valid_size: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class Splits:
    train: tuple[LabeledSample, ...]
    valid: tuple[LabeledSample, ...]
    test: tuple[LabeledSample, ...]


def load_dataset(path, split: SplitSpec | None = None) -> Splits:
    """Load and validate a labeled dataset, returning train/valid/test lists.

    Records carrying a `split` field are honored when every record has one;
    otherwise a seeded shuffle assigns test/valid/train per `split`.
    """
    samples: list[LabeledSample] = []
    assigned: list[str | None] = []
    for lineno, record in _iter_records(path, DATASET_SCHEMA):
        sample, split_name = _sample_from_record(record, path, lineno)
        samples.append(sample)
        assigned.append(split_name)
    if not samples:
        raise DatasetFormatError(f"{path}: no records found")

    if all(s is not None for s in assigned):
        by = {"train": [], "valid": [], "test": []}
        for sample, split_name in zip(samples, assigned):
            by[split_name].append(sample)
        return Splits(tuple(by["train"]), tuple(by["valid"]), tuple(by["test"]))

    spec = split or SplitSpec()
    n = len(samples)
    test_size, valid_size = spec.test_size, spec.valid_size
    if test_size + valid_size > n // 2:
        test_size = max(1, round(n * 0.15))
        valid_size = max(1, round(n * 0.05))
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    test_idx = set(order[:test_size].tolist())
    valid_idx = set(order[test_size:test_size + valid_size].tolist())
    train = tuple(s for i, s in enumerate(samples) if i not in test_idx and i not in valid_idx)
    valid = tuple(samples[i] for i in sorted(valid_idx))
    test = tuple(samples[i] for i in sorted(test_idx))
    return Splits(train, valid, test)


def load_entity_sets(path) -> list[EntitySet]:
    """Entity sets without ground truth (prediction / ingestion input)."""
    sets: list[EntitySet] = []
    for lineno, record in _iter_records(path, ENTITY_SETS_SCHEMA):
        for key in ("set_id", "entities"):
            if key not in record:
                raise DatasetFormatError(f"{path}:{lineno}: missing field {key!r}")
        entities = tuple(_entity_from_record(e, path, lineno) for e in record["entities"])
        try:
            sets.append(EntitySet(set_id=str(record["set_id"]), entities=entities))
        except ValueError as err:
            raise DatasetFormatError(f"{path}:{lineno}: {err}") from None
    if not sets:
        raise DatasetFormatError(f"{path}: no records found")
    return sets


def load_universe(path) -> list[Entity]:
    """Flat entity list ({id, text} records) used for self-supervision."""
    entities: list[Entity] = []
    seen: set[str] = set()
    for lineno, record in _iter_records(path, UNIVERSE_SCHEMA):
        entity = _entity_from_record(record, path, lineno)
        if entity.id in seen:
            raise DatasetFormatError(f"{path}:{lineno}: duplicate entity id {entity.id!r}")
        seen.add(entity.id)
        entities.append(entity)
    if not entities:
        raise DatasetFormatError(f"{path}: no records found")
    return entities


def load_raw_outputs(path) -> list[dict]:
    """Raw clustering text per set: {set_id, raw_text} records."""
    rows: list[dict] = []
    for lineno, record in _iter_records(path, RAW_OUTPUTS_SCHEMA):
        for key in ("set_id", "raw_text"):
            if key not in record:
                raise DatasetFormatError(f"{path}:{lineno}: missing field {key!r}")
        rows.append({"set_id": str(record["set_id"]), "raw_text": str(record["raw_text"])})
    return rows


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def write_dataset(path, samples, splits: dict[str, str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump({"schema": DATASET_SCHEMA, "version": FORMAT_VERSION}) + "\n")
        for sample in samples:
            eset = sample.entity_set
            groups = sample.clustering.clusters()
            record = {
                "set_id": eset.set_id,
                "entities": [{"id": e.id, "text": e.text} for e in eset.entities],
                "clusters": [[eset.entities[i].id for i in group] for group in groups],
            }
            if splits and eset.set_id in splits:
                record["split"] = splits[eset.set_id]
            fh.write(_dump(record) + "\n")


def write_entity_sets(path, sets) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump({"schema": ENTITY_SETS_SCHEMA, "version": FORMAT_VERSION}) + "\n")
        for eset in sets:
            record = {
                "set_id": eset.set_id,
                "entities": [{"id": e.id, "text": e.text} for e in eset.entities],
            }
            fh.write(_dump(record) + "\n")


def write_universe(path, entities) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump({"schema": UNIVERSE_SCHEMA, "version": FORMAT_VERSION}) + "\n")
        for e in entities:
            fh.write(_dump({"id": e.id, "text": e.text}) + "\n")


# ---------------------------------------------------------------------------
# free-form clustering text parser

_BULLET_RE = re.compile(r"^\s*(?:[-*+•·]|\d+[.)])\s*")
_WS_RE = re.compile(r"\s+")


def _normalize(text: str) -> str:
    return _WS_RE.sub(" ", text).strip().casefold()


@dataclass(frozen=True)
class ParseResult:
    """Outcome of parsing one raw clustering text.

    Rejection is a value, not an exception. On acceptance, `entity_set` is
    the (possibly reduced) set of matched entities in their original order
    and `clustering` covers exactly those entities.
    """

    accepted: bool
    reason: str | None
    entity_set: EntitySet | None
    clustering: Clustering | None
    matched: int
    dropped: int


def _reject(reason: str, n_entities: int) -> ParseResult:
    return ParseResult(False, reason, None, None, 0, n_entities)


def parse_llm_clustering(raw_text: str, entity_set: EntitySet) -> ParseResult:
    """Parse blocks of "title line + member lines" into a clustering.

    Blocks are blank-line separated; the first line of each block is a
    discarded title (a "Title:" prefix is tolerated) and the remaining lines
    are members, optionally bulleted. Members are matched to entities by
    exact text first, then by case/whitespace-normalized text. Entities that
    never match are dropped; empty or completely unparseable text is a
    rejection.
    """
    n_entities = len(entity_set)
    if not raw_text or not raw_text.strip():
        return _reject("empty", n_entities)

    exact: dict[str, list[int]] = {}
    normed: dict[str, list[int]] = {}
    for i, e in enumerate(entity_set.entities):
        exact.setdefault(e.text, []).append(i)
        normed.setdefault(_normalize(e.text), []).append(i)

    blocks = [b for b in re.split(r"\n\s*\n", raw_text.strip()) if b.strip()]
    used: set[int] = set()
    groups: list[list[int]] = []
    for block in blocks:
        lines = [ln for ln in block.splitlines() if ln.strip()]
        if len(lines) < 2:
            continue  # a bare title clusters nothing
        members = lines[1:]
        group: list[int] = []
        for line in members:
            text = _BULLET_RE.sub("", line).strip()
            idx = _match_entity(text, exact, normed, used)
            if idx is not None:
                group.append(idx)
                used.add(idx)
        if group:
            groups.append(group)

    if not groups:
        return _reject("unparseable", n_entities)

    matched_sorted = sorted(used)
    keep = {old: new for new, old in enumerate(matched_sorted)}
    sub_entities = tuple(entity_set.entities[i] for i in matched_sorted)
    sub_set = EntitySet(set_id=entity_set.set_id, entities=sub_entities)
    clustering = Clustering.from_groups(
        entity_set.set_id, [[keep[i] for i in g] for g in groups], len(sub_entities)
    )
    return ParseResult(True, None, sub_set, clustering, len(matched_sorted),
                       n_entities - len(matched_sorted))


def _match_entity(text: str, exact, normed, used: set[int]) -> int | None:
    for pool, key in ((exact, text), (normed, _normalize(text))):
        for idx in pool.get(key, ()):
            if idx not in used:
                return idx
    return None


# ---------------------------------------------------------------------------
# self-supervised sample generator


@dataclass(frozen=True)
class SelfSupConfig:
    """Sampling ranges for the word-drop clustering task (inclusive)."""

    clusters_range: tuple[int, int] = (2, 10)
    cluster_size_range: tuple[int, int] = (1, 5)
    drop_fraction_range: tuple[float, float] = (0.2, 0.7)

    def __post_init__(self):
        for lo, hi, name in (
            (*self.clusters_range, "clusters_range"),
            (*self.cluster_size_range, "cluster_size_range"),
        ):
            if lo < 1 or lo > hi:
                raise ValueError(f"{name} must satisfy 1 <= min <= max, got ({lo}, {hi})")
        lo, hi = self.drop_fraction_range
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError(f"drop fractions must lie in (0, 1), got ({lo}, {hi})")


def _word_drop(words: list[str], fraction: float, rng: np.random.Generator) -> list[str]:
    # at least one word always survives
    n_drop = min(int(round(fraction * len(words))), len(words) - 1)
    if n_drop <= 0:
        return list(words)
    drop = set(rng.choice(len(words), size=n_drop, replace=False).tolist())
    return [w for i, w in enumerate(words) if i not in drop]


def generate_selfsup_sample(universe: list[Entity], cfg: SelfSupConfig,
                            rng: np.random.Generator, set_id: str = "selfsup") -> LabeledSample:
    """One synthetic sample: clusters of word-drop transformations of seeds.

    Samples a number of clusters, a distinct seed entity per cluster, and a
    cluster size; each member is an independent word-drop transformation of
    its seed (kept words preserve their original order). Ground truth groups
    members by seed.
    """
    if not universe:
        raise ValueError("universe must be nonempty")
    lo, hi = cfg.clusters_range
    k = int(rng.integers(lo, hi + 1))
    if k > len(universe):
        logger.warning("universe has %d entities; clamping cluster count %d", len(universe), k)
        k = len(universe)
    seed_idx = rng.choice(len(universe), size=k, replace=False)
    entities: list[Entity] = []
    groups: list[list[int]] = []
    for c, si in enumerate(seed_idx):
        seed = universe[int(si)]
        words = seed.text.split()
        if not words:
            raise ValueError(f"entity {seed.id!r} has an empty description")
        size = int(rng.integers(cfg.cluster_size_range[0], cfg.cluster_size_range[1] + 1))
        group = []
        for j in range(size):
            fraction = float(rng.uniform(*cfg.drop_fraction_range))
            kept = _word_drop(words, fraction, rng)
            group.append(len(entities))
            entities.append(Entity(id=f"{seed.id}~{c}.{j}", text=" ".join(kept)))
        groups.append(group)

    order = rng.permutation(len(entities))
    remap = {int(old): new for new, old in enumerate(order)}
    shuffled = tuple(entities[int(old)] for old in order)
    eset = EntitySet(set_id=set_id, entities=shuffled)
    clustering = Clustering.from_groups(set_id, [[remap[i] for i in g] for g in groups], len(shuffled))
    return LabeledSample(eset, clustering)


# ---------------------------------------------------------------------------
# synthetic topic benchmark

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _pseudo_words(count: int, rng: np.random.Generator) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        syllables = rng.integers(2, 4)
        w = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        )
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass(frozen=True)
class SyntheticConfig:
    n_topics: int = 6
    vocab_per_topic: int = 12
    n_sets: int = 100
    entities_per_set: int = 10
    homonym_rate: float = 0.3
    noise_rate: float = 0.05
    words_per_entity: tuple[int, int] = (3, 6)
    max_topics_per_set: int = 4
    homonyms_per_pair: int = 4

    def __post_init__(self):
        if self.n_topics < 2:
            raise ValueError(f"need at least 2 topics, got {self.n_topics}")
        if not 0.0 <= self.homonym_rate < 1.0 or not 0.0 <= self.noise_rate < 1.0:
            raise ValueError("rates must lie in [0, 1)")
        if self.homonyms_per_pair < 1:
            raise ValueError("homonyms_per_pair must be >= 1")


def generate_synthetic_benchmark(cfg: SyntheticConfig, rng: np.random.Generator) -> list[LabeledSample]:
    """Topic-structured benchmark whose hard entities need set context.

    Regular entities are bags of words from one topic lexicon; the first
    slot is the topic's anchor word, so the zero-homonym, zero-noise variant
    is exactly solvable by word overlap. With probability `homonym_rate` an
    entity is instead a *bridge*: most of its words come from a homonym pool
    shared by its topic and a partner topic that does not occur in the set,
    plus one or two non-anchor words of its own topic. On its own text a
    bridge barely leans toward its topic; the rest of the set is what makes
    the lean decisive, which is precisely the ambiguity an encoder without
    inter-entity attention cannot resolve per set. A set's ground-truth
    clusters are its topics.
    """
    n_topics = cfg.n_topics
    lexicons = [_pseudo_words(cfg.vocab_per_topic, rng) for _ in range(n_topics)]
    topic_pairs = [(a, b) for a in range(n_topics) for b in range(a + 1, n_topics)]
    pair_pools = {pair: _pseudo_words(cfg.homonyms_per_pair, rng) for pair in topic_pairs}
    noise = _pseudo_words(cfg.vocab_per_topic, rng)

    def regular_word(topic: int, anchor: bool) -> str:
        if rng.random() < cfg.noise_rate:
            return noise[int(rng.integers(len(noise)))]
        if anchor:
            return lexicons[topic][0]
        return lexicons[topic][int(rng.integers(cfg.vocab_per_topic))]

    def bridge_words(topic: int, absent_topics: list[int], w: int) -> list[str]:
        partner = absent_topics[int(rng.integers(len(absent_topics)))]
        pool = pair_pools[(min(topic, partner), max(topic, partner))]
        n_own = 1 if w <= 4 else 2
        own = [lexicons[topic][1 + int(rng.integers(cfg.vocab_per_topic - 1))]
               for _ in range(n_own)]
        filler = [pool[int(rng.integers(len(pool)))] for _ in range(w - n_own)]
        words = own + filler
        return [words[int(i)] for i in rng.permutation(len(words))]

    samples: list[LabeledSample] = []
    for s in range(cfg.n_sets):
        set_id = f"syn{s:05d}"
        k = int(rng.integers(2, min(cfg.max_topics_per_set, n_topics) + 1))
        topics = [int(t) for t in rng.choice(n_topics, size=k, replace=False)]
        absent = [t for t in range(n_topics) if t not in topics]
        counts = rng.multinomial(cfg.entities_per_set - k, [1.0 / k] * k) + 1
        entities: list[Entity] = []
        topic_of: list[int] = []
        for t, c in zip(topics, counts):
            for _ in range(int(c)):
                w = int(rng.integers(cfg.words_per_entity[0], cfg.words_per_entity[1] + 1))
                if absent and rng.random() < cfg.homonym_rate:
                    words = bridge_words(t, absent, w)
                else:
                    words = [regular_word(t, anchor=(slot == 0)) for slot in range(w)]
                entities.append(Entity(id=f"{set_id}-e{len(entities)}", text=" ".join(words)))
                topic_of.append(t)
        order = rng.permutation(len(entities))
        shuffled = tuple(entities[int(i)] for i in order)
        labels = tuple(topic_of[int(i)] for i in order)
        eset = EntitySet(set_id=set_id, entities=shuffled)
        samples.append(LabeledSample(eset, Clustering(set_id, labels)))
    return samples
