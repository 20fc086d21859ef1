"""Corpora: CoNLL column files, BIO validation, synthetic bilingual data.

The synthetic generator produces a source and a target corpus that share
entity surface forms (so entity knowledge transfers across languages)
while non-entity context tokens are drawn per token from a shared
vocabulary with probability ``kappa`` and otherwise from the language's
private vocabulary. Each entity mention is preceded by a type-indicative
trigger word (itself a context token following the same kappa rule), and
a configurable share of mention heads come from a type-ambiguous name
pool, so correct typing genuinely depends on context. Every sentence
records its realized shared-token fraction as ground truth for
selection-quality analysis.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, ConfigError, FormatError

SOURCE = "source"
TARGET = "target"

UNK_TOKEN = "<unk>"

OUTSIDE = 0  # index of the O tag in every LabelSet


@dataclass(frozen=True)
class LabelSet:
    """BIO tag inventory over a list of entity types; O is index 0."""

    entity_types: tuple[str, ...]

    def __post_init__(self):
        if not self.entity_types or len(set(self.entity_types)) != len(self.entity_types):
            raise ConfigError(f"entity types must be nonempty and unique: {self.entity_types}")

    @property
    def tags(self) -> tuple[str, ...]:
        out = ["O"]
        for t in self.entity_types:
            out.extend((f"B-{t}", f"I-{t}"))
        return tuple(out)

    def __len__(self) -> int:
        return 2 * len(self.entity_types) + 1

    def index(self, tag: str) -> int:
        try:
            return self.tags.index(tag)
        except ValueError:
            raise KeyError(tag) from None

    def tag(self, index: int) -> str:
        return self.tags[index]

    def begin(self, entity_type: str) -> int:
        return 1 + 2 * self.entity_types.index(entity_type)

    def inside(self, entity_type: str) -> int:
        return self.begin(entity_type) + 1

    def entity_type_of(self, index: int) -> str | None:
        return None if index == OUTSIDE else self.entity_types[(index - 1) // 2]

    def is_begin(self, index: int) -> bool:
        return index != OUTSIDE and (index - 1) % 2 == 0

    def is_inside(self, index: int) -> bool:
        return index != OUTSIDE and (index - 1) % 2 == 1


@dataclass(frozen=True)
class Sentence:
    id: int
    tokens: tuple[str, ...]
    gold_tags: tuple[int, ...] | None
    language: str
    # Realized fraction of non-entity tokens drawn from the shared
    # vocabulary; set by the synthetic generator, None for file corpora.
    shared_fraction: float | None = None

    def __post_init__(self):
        if not self.tokens:
            raise ConfigError("sentence must have at least one token")
        if self.gold_tags is not None and len(self.gold_tags) != len(self.tokens):
            raise AlignmentError(
                f"sentence {self.id}: {len(self.gold_tags)} tags for {len(self.tokens)} tokens"
            )

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[Sentence, ...]
    label_set: LabelSet
    split: str = "train"

    def __post_init__(self):
        ids = [s.id for s in self.sentences]
        if len(set(ids)) != len(ids):
            raise ConfigError("sentence ids must be unique within a corpus")

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def by_id(self) -> dict[int, Sentence]:
        return {s.id: s for s in self.sentences}


def validate_bio(tags: Sequence[int], label_set: LabelSet) -> bool:
    """True iff the tag index sequence obeys the BIO transition rules."""
    prev = OUTSIDE
    for t in tags:
        if not 0 <= t < len(label_set):
            raise IndexError(f"tag index {t} out of range")
        if label_set.is_inside(t):
            etype = label_set.entity_type_of(t)
            if prev == OUTSIDE or label_set.entity_type_of(prev) != etype:
                return False
        prev = t
    return True


def read_conll(path, label_set: LabelSet, language: str = SOURCE, split: str = "train") -> Corpus:
    """Parse a two-column CoNLL file into a BIO-validated corpus.

    One ``token<space or tab>tag`` pair per line, blank line between
    sentences, -DOCSTART- lines skipped. Raises FormatError with the
    offending line number on malformed input.
    """
    sentences: list[Sentence] = []
    tokens: list[str] = []
    tags: list[int] = []
    start_line = 0

    def flush(line_no: int):
        if not tokens:
            return
        if not validate_bio(tags, label_set):
            raise FormatError("invalid BIO transition in sentence", _first_bio_violation(tags, label_set, start_line))
        sentences.append(Sentence(len(sentences), tuple(tokens), tuple(tags), language))
        tokens.clear()
        tags.clear()

    with open(path, "r", encoding="utf-8") as fh:
        line_no = 0
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush(line_no)
                continue
            if line.startswith("-DOCSTART-"):
                continue
            fields = line.split()
            if len(fields) != 2:
                raise FormatError(f"expected 'token tag', got {len(fields)} columns", line_no)
            token, tag = fields
            try:
                tag_idx = label_set.index(tag)
            except KeyError:
                raise FormatError(f"unknown tag {tag!r}", line_no) from None
            if not tokens:
                start_line = line_no
            tokens.append(token)
            tags.append(tag_idx)
        flush(line_no + 1)
    return Corpus(tuple(sentences), label_set, split)


def _first_bio_violation(tags: Sequence[int], label_set: LabelSet, start_line: int) -> int:
    prev = OUTSIDE
    for offset, t in enumerate(tags):
        if label_set.is_inside(t):
            if prev == OUTSIDE or label_set.entity_type_of(prev) != label_set.entity_type_of(t):
                return start_line + offset
        prev = t
    return start_line


def write_conll(corpus: Corpus, path, tags: Sequence[Sequence[int]] | None = None) -> None:
    """Write a corpus (optionally with replacement tag sequences) as CoNLL.

    Round-trips through read_conll exactly: tokens, tags, sentence order.
    """
    if tags is not None and len(tags) != len(corpus.sentences):
        raise AlignmentError(f"{len(tags)} tag sequences for {len(corpus)} sentences")
    with open(path, "w", encoding="utf-8") as fh:
        for i, sentence in enumerate(corpus):
            seq = tags[i] if tags is not None else sentence.gold_tags
            if seq is None:
                raise AlignmentError(f"sentence {sentence.id} has no tags to write")
            if len(seq) != len(sentence):
                raise AlignmentError(
                    f"sentence {sentence.id}: {len(seq)} tags for {len(sentence)} tokens"
                )
            for token, tag in zip(sentence.tokens, seq):
                fh.write(f"{token} {corpus.label_set.tag(tag)}\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic bilingual generation


@dataclass(frozen=True)
class EntityTemplate:
    """Generative pattern for one entity type."""

    entity_type: str
    name_count: int = 40       # size of the type-unique mention-head pool
    max_mention_len: int = 2   # mention length drawn uniformly from 1..max
    ambiguous_prob: float = 0.5  # chance the mention head comes from the shared ambiguous pool

    def __post_init__(self):
        if self.name_count < 1 or self.max_mention_len < 1:
            raise ConfigError(f"bad template for {self.entity_type}")
        if not 0.0 <= self.ambiguous_prob <= 1.0:
            raise ConfigError("ambiguous_prob must be in [0, 1]")


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for one synthetic corpus pair (one split)."""

    shared_vocab_size: int = 120
    private_vocab_size: int = 400
    entity_templates: tuple[EntityTemplate, ...] = (
        EntityTemplate("PER"),
        EntityTemplate("LOC"),
        EntityTemplate("ORG"),
        EntityTemplate("MISC"),
    )
    kappa: float = 0.3
    sentence_length_range: tuple[int, int] = (8, 14)
    n_sentences: int = 2000
    ambiguous_names: int = 24
    # Chance a shared-context draw uses the ambiguous name pool, making
    # entity-hood of those tokens depend on the preceding trigger word.
    ambiguous_context_prob: float = 0.15
    trigger_words_per_type: int = 4
    min_entities: int = 0
    max_entities: int = 3
    seed: int = 9

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigError(f"kappa must be in [0, 1], got {self.kappa}")
        if self.shared_vocab_size < 1 or self.private_vocab_size < 1:
            raise ConfigError("vocabulary sizes must be >= 1")
        lo, hi = self.sentence_length_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad sentence length range {self.sentence_length_range}")
        if self.n_sentences < 0 or self.ambiguous_names < 1 or self.trigger_words_per_type < 1:
            raise ConfigError("counts must be positive")
        if not 0 <= self.min_entities <= self.max_entities:
            raise ConfigError("need 0 <= min_entities <= max_entities")
        if not 0.0 <= self.ambiguous_context_prob <= 1.0:
            raise ConfigError("ambiguous_context_prob must be in [0, 1]")

    @property
    def label_set(self) -> LabelSet:
        return LabelSet(tuple(t.entity_type for t in self.entity_templates))


class _Pools:
    """Deterministic token pools derived from a SynthSpec."""

    def __init__(self, spec: SynthSpec):
        self.shared_ctx = [f"sh{i}" for i in range(spec.shared_vocab_size)]
        self.private_ctx = {
            SOURCE: [f"src{i}" for i in range(spec.private_vocab_size)],
            TARGET: [f"tgt{i}" for i in range(spec.private_vocab_size)],
        }
        self.shared_trigger = {}
        self.private_trigger = {SOURCE: {}, TARGET: {}}
        self.names = {}
        for tpl in spec.entity_templates:
            key = tpl.entity_type.lower()
            k = spec.trigger_words_per_type
            self.shared_trigger[tpl.entity_type] = [f"cue_{key}_sh{i}" for i in range(k)]
            for lang, tag in ((SOURCE, "src"), (TARGET, "tgt")):
                self.private_trigger[lang][tpl.entity_type] = [f"cue_{key}_{tag}{i}" for i in range(k)]
            self.names[tpl.entity_type] = [f"{key}_n{i}" for i in range(tpl.name_count)]
        self.ambiguous = [f"amb{i}" for i in range(spec.ambiguous_names)]


def _make_sentence(spec: SynthSpec, pools: _Pools, rng: np.random.Generator,
                   language: str, sent_id: int, label_set: LabelSet) -> Sentence:
    lo, hi = spec.sentence_length_range
    length = int(rng.integers(lo, hi + 1))

    # Choose entity mentions that fit: each needs a trigger slot plus
    # 1..max_mention_len tokens.
    n_templates = len(spec.entity_templates)
    mentions: list[tuple[EntityTemplate, int]] = []
    budget = length
    max_entities = min(spec.max_entities, length // 3)
    min_entities = min(spec.min_entities, max_entities)
    n_entities = int(rng.integers(min_entities, max_entities + 1)) if max_entities > 0 else 0
    for _ in range(n_entities):
        tpl = spec.entity_templates[int(rng.integers(0, n_templates))]
        mention_len = int(rng.integers(1, tpl.max_mention_len + 1))
        if budget - (mention_len + 1) < 0:
            break
        mentions.append((tpl, mention_len))
        budget -= mention_len + 1

    # Distribute the remaining context tokens into the gaps around mentions.
    gaps = np.zeros(len(mentions) + 1, dtype=int)
    for _ in range(budget):
        gaps[int(rng.integers(0, len(gaps)))] += 1

    tokens: list[str] = []
    tags: list[int] = []
    shared_draws = 0
    context_draws = 0

    def emit_context(pool_shared: list[str], pool_private: list[str], generic: bool = False):
        nonlocal shared_draws, context_draws
        context_draws += 1
        if rng.random() < spec.kappa:
            shared_draws += 1
            pool = pool_shared
            if generic and rng.random() < spec.ambiguous_context_prob:
                pool = pools.ambiguous
        else:
            pool = pool_private
        tokens.append(pool[int(rng.integers(0, len(pool)))])
        tags.append(OUTSIDE)

    for gap, mention in zip(gaps, list(mentions) + [None]):
        for _ in range(gap):
            emit_context(pools.shared_ctx, pools.private_ctx[language], generic=True)
        if mention is None:
            continue
        tpl, mention_len = mention
        emit_context(pools.shared_trigger[tpl.entity_type],
                     pools.private_trigger[language][tpl.entity_type])
        head_pool = pools.ambiguous if rng.random() < tpl.ambiguous_prob else pools.names[tpl.entity_type]
        tokens.append(head_pool[int(rng.integers(0, len(head_pool)))])
        tags.append(label_set.begin(tpl.entity_type))
        for _ in range(mention_len - 1):
            tail_pool = pools.names[tpl.entity_type]
            tokens.append(tail_pool[int(rng.integers(0, len(tail_pool)))])
            tags.append(label_set.inside(tpl.entity_type))

    fraction = shared_draws / context_draws if context_draws else 0.0
    return Sentence(sent_id, tuple(tokens), tuple(tags), language, shared_fraction=fraction)


def generate_bilingual(spec: SynthSpec, split: str = "train") -> tuple[Corpus, Corpus]:
    """Generate a (source, target) corpus pair, deterministic per (spec, seed)."""
    rng = np.random.default_rng(spec.seed)
    pools = _Pools(spec)
    label_set = spec.label_set
    corpora = []
    for language in (SOURCE, TARGET):
        sentences = tuple(
            _make_sentence(spec, pools, rng, language, i, label_set)
            for i in range(spec.n_sentences)
        )
        corpora.append(Corpus(sentences, label_set, split))
    return corpora[0], corpora[1]


class Vocabulary:
    """Closed token vocabulary with a reserved UNK index for unseen tokens."""

    def __init__(self, tokens: Iterable[str]):
        ordered = sorted(set(tokens) - {UNK_TOKEN})
        self._index = {UNK_TOKEN: 0}
        for token in ordered:
            self._index[token] = len(self._index)

    @classmethod
    def from_corpora(cls, corpora: Iterable[Corpus]) -> "Vocabulary":
        return cls(token for corpus in corpora for sentence in corpus for token in sentence.tokens)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def encode(self, tokens: Sequence[str], max_len: int | None = None) -> np.ndarray:
        if max_len is not None:
            tokens = tokens[:max_len]
        return np.array([self._index.get(t, 0) for t in tokens], dtype=np.intp)
