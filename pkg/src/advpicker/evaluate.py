"""BIO-constrained Viterbi decoding, entity-level F1, probe training, split eval."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import models, tensors as T
from .corpus import OUTSIDE, Corpus, LabelSet, Vocabulary, validate_bio
from .errors import AlignmentError, InvalidBIO, ShapeError
from .models import DiscriminatorConfig, EncoderConfig
from .tensors import ParamStore

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class EntitySpan:
    entity_type: str
    start: int
    end: int  # inclusive

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"span start {self.start} after end {self.end}")


@dataclass(frozen=True)
class TypeScore:
    precision: float
    recall: float
    f1: float
    n_gold: int
    n_pred: int
    n_correct: int


@dataclass(frozen=True)
class EvalReport:
    """Entity-level micro precision/recall/F1 with a per-type breakdown."""

    precision: float
    recall: float
    f1: float
    n_gold: int
    n_pred: int
    n_correct: int
    per_type: dict[str, TypeScore] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n_gold": self.n_gold,
            "n_pred": self.n_pred,
            "n_correct": self.n_correct,
            "per_type": {k: vars(v) for k, v in sorted(self.per_type.items())},
        }
        return d


def _prf(n_gold: int, n_pred: int, n_correct: int) -> tuple[float, float, float]:
    p = n_correct / n_pred if n_pred else 0.0
    r = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def transition_mask(label_set: LabelSet) -> np.ndarray:
    """allowed[prev, next] for BIO: I-X only after B-X or I-X of the same type."""
    n = len(label_set)
    allowed = np.ones((n, n), dtype=bool)
    for nxt in range(n):
        if not label_set.is_inside(nxt):
            continue
        etype = label_set.entity_type_of(nxt)
        for prev in range(n):
            allowed[prev, nxt] = (
                prev != OUTSIDE and label_set.entity_type_of(prev) == etype
            )
    return allowed


def viterbi_decode(probs: np.ndarray, label_set: LabelSet) -> list[int]:
    """Highest log-probability BIO-valid tag path for one sentence.

    Transitions score 0 when BIO-valid and -inf otherwise; a start at
    I-X is likewise forbidden. The output always passes validate_bio.
    Ties resolve to the lowest tag index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != len(label_set):
        raise ShapeError(f"viterbi: probs {probs.shape} for {len(label_set)} tags")
    n, k = probs.shape
    logp = np.log(np.maximum(probs, _LOG_FLOOR))

    start_ok = np.array([not label_set.is_inside(t) for t in range(k)])
    trans = np.where(transition_mask(label_set), 0.0, -np.inf)

    score = np.where(start_ok, logp[0], -np.inf)
    back = np.zeros((n, k), dtype=np.intp)
    for i in range(1, n):
        cand = score[:, None] + trans
        back[i] = np.argmax(cand, axis=0)
        score = cand[back[i], np.arange(k)] + logp[i]

    path = [int(np.argmax(score))]
    for i in range(n - 1, 0, -1):
        path.append(int(back[i, path[-1]]))
    path.reverse()
    return path


def viterbi_oracle(probs: np.ndarray, label_set: LabelSet) -> list[int]:
    """Exhaustive enumeration of all BIO-valid paths; for small N only."""
    probs = np.asarray(probs, dtype=np.float64)
    n, k = probs.shape
    logp = np.log(np.maximum(probs, _LOG_FLOOR))
    allowed = transition_mask(label_set)

    best_path: list[int] | None = None
    best_score = -np.inf
    stack: list[tuple[list[int], float]] = [
        ([t], logp[0, t]) for t in range(k) if not label_set.is_inside(t)
    ]
    while stack:
        path, score = stack.pop()
        if len(path) == n:
            # Mirror the decoder's lowest-index tie-break under reversed
            # DFS order: strictly-better or equal-and-smaller wins.
            if score > best_score or (score == best_score and (best_path is None or path < best_path)):
                best_score, best_path = score, path
            continue
        i = len(path)
        for t in range(k):
            if allowed[path[-1], t]:
                stack.append((path + [t], score + logp[i, t]))
    assert best_path is not None
    return best_path


def extract_spans(tags: Sequence[int], label_set: LabelSet) -> list[EntitySpan]:
    """Maximal B-initiated runs of a BIO-valid sequence as typed spans."""
    if not validate_bio(tags, label_set):
        raise InvalidBIO(f"tag sequence {list(tags)} is not BIO-valid")
    spans: list[EntitySpan] = []
    start = None
    current = None
    for i, t in enumerate(tags):
        if label_set.is_begin(t):
            if current is not None:
                spans.append(EntitySpan(current, start, i - 1))
            start, current = i, label_set.entity_type_of(t)
        elif t == OUTSIDE:
            if current is not None:
                spans.append(EntitySpan(current, start, i - 1))
            start, current = None, None
        # I-tags extend the open span; validity is already checked.
    if current is not None:
        spans.append(EntitySpan(current, start, len(tags) - 1))
    return spans


def entity_f1(gold: Sequence[Sequence[EntitySpan]], pred: Sequence[Sequence[EntitySpan]]) -> EvalReport:
    """Exact-match (type and boundaries) micro P/R/F1 over aligned sentences."""
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    counts: dict[str, list[int]] = {}
    for gold_spans, pred_spans in zip(gold, pred):
        gset, pset = set(gold_spans), set(pred_spans)
        for span in gset:
            counts.setdefault(span.entity_type, [0, 0, 0])[0] += 1
        for span in pset:
            counts.setdefault(span.entity_type, [0, 0, 0])[1] += 1
        for span in gset & pset:
            counts[span.entity_type][2] += 1
    per_type = {}
    for etype, (n_gold, n_pred, n_correct) in sorted(counts.items()):
        p, r, f1 = _prf(n_gold, n_pred, n_correct)
        per_type[etype] = TypeScore(p, r, f1, n_gold, n_pred, n_correct)
    totals = [sum(c[i] for c in counts.values()) for i in range(3)]
    p, r, f1 = _prf(*totals)
    return EvalReport(p, r, f1, totals[0], totals[1], totals[2], per_type)


def gold_spans(corpus: Corpus) -> list[list[EntitySpan]]:
    out = []
    for sentence in corpus:
        if sentence.gold_tags is None:
            raise AlignmentError(f"sentence {sentence.id} has no gold tags")
        out.append(extract_spans(sentence.gold_tags, corpus.label_set))
    return out


def decode_corpus(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
                  corpus: Corpus, batch_size: int = 64) -> list[list[int]]:
    """Viterbi-decoded tag sequences for every sentence, in corpus order."""
    out: list[list[int]] = []
    sentences = list(corpus)
    for lo in range(0, len(sentences), batch_size):
        chunk = sentences[lo:lo + batch_size]
        ids = [vocab.encode(s.tokens) for s in chunk]
        probs = models.ner_head(store, models.encode_batch(store, enc_cfg, ids)).data
        offset = 0
        for s in chunk:
            out.append(viterbi_decode(probs[offset:offset + len(s)], corpus.label_set))
            offset += len(s)
    return out


def corpus_f1(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary, corpus: Corpus) -> EvalReport:
    pred = decode_corpus(store, enc_cfg, vocab, corpus)
    return entity_f1(gold_spans(corpus), [extract_spans(t, corpus.label_set) for t in pred])


# ---------------------------------------------------------------------------
# Probe discriminator: residual language information in frozen features


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 5
    lr: float = 1e-3
    batch_size: int = 64
    hidden_dim: int = 64
    seed: int = 0


def encode_features(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
                    corpus: Corpus, batch_size: int = 128) -> np.ndarray:
    """Frozen encoder features for all tokens of a corpus, stacked."""
    chunks = []
    sentences = list(corpus)
    for lo in range(0, len(sentences), batch_size):
        ids = [vocab.encode(s.tokens) for s in sentences[lo:lo + batch_size]]
        chunks.append(models.encode_batch(store, enc_cfg, ids).data)
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, enc_cfg.embed_dim))


def probe_on_features(train_x: np.ndarray, train_y: np.ndarray,
                      test_x: np.ndarray, test_y: np.ndarray,
                      cfg: ProbeConfig = ProbeConfig()) -> float:
    """Train a fresh discriminator on fixed features; held-out token accuracy."""
    store = ParamStore(cfg.seed)
    models.init_discriminator(store, train_x.shape[1], DiscriminatorConfig(cfg.hidden_dim))
    rng = np.random.default_rng(cfg.seed)
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(train_x))
        for lo in range(0, len(order), cfg.batch_size):
            rows = order[lo:lo + cfg.batch_size]
            p = models.discriminate(store, T.Tensor(train_x[rows]))
            T.backward(T.bce(p, train_y[rows]))
            step += 1
            T.adamw_step(store, (models.DISCRIMINATOR,), cfg.lr, step)
    p = models.discriminate(store, T.Tensor(test_x)).data.ravel()
    return float(np.mean((p > 0.5) == (test_y > 0.5)))


def probe_discriminator(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
                        train: tuple[Corpus, Corpus], heldout: tuple[Corpus, Corpus],
                        cfg: ProbeConfig = ProbeConfig()) -> float:
    """Token accuracy of a probe trained on frozen encoder features.

    ``train``/``heldout`` are (source, target) corpus pairs; labels are
    1 for source tokens and 0 for target tokens.
    """
    def stack(pair):
        xs = [encode_features(store, enc_cfg, vocab, c) for c in pair]
        ys = [np.ones(len(xs[0])), np.zeros(len(xs[1]))]
        return np.concatenate(xs), np.concatenate(ys)

    train_x, train_y = stack(train)
    test_x, test_y = stack(heldout)
    return probe_on_features(train_x, train_y, test_x, test_y, cfg)


# ---------------------------------------------------------------------------
# Selected/Other split evaluation


@dataclass(frozen=True)
class SplitEvalResult:
    selected: EvalReport
    other: EvalReport | None
    selected_ids: tuple[int, ...]
    other_ids: tuple[int, ...]


def split_eval(test: Corpus, teacher: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
               rho: float, predict: Callable[[Corpus], list[list[int]]],
               pooling: str = "mean") -> SplitEvalResult:
    """Partition a test corpus by discriminator l_score and score each part.

    The top-ceil(rho*n) sentences by l_score form the Selected partition;
    ``predict`` maps a corpus to tag sequences and is applied per partition.
    """
    from .selection import rank_and_split, score_sentences

    scored = score_sentences(teacher, enc_cfg, vocab, test, pooling=pooling)
    selected_ids, other_ids = rank_and_split([(s.sentence_id, s.l_score) for s in scored], rho)

    def run(ids: tuple[int, ...]) -> EvalReport | None:
        if not ids:
            return None
        keep = set(ids)
        part = Corpus(tuple(s for s in test if s.id in keep), test.label_set, test.split)
        pred = predict(part)
        return entity_f1(gold_spans(part), [extract_spans(t, part.label_set) for t in pred])

    selected_report = run(selected_ids)
    assert selected_report is not None  # rho > 0 guarantees a nonempty selection
    return SplitEvalResult(selected_report, run(other_ids), selected_ids, other_ids)
