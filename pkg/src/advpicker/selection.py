"""Pseudo-labeling, multi-seed merging, language-independence scoring, top-rho selection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import models
from .corpus import Corpus, Sentence, Vocabulary
from .errors import AlignmentError, EmptyInput, ShapeError
from .models import EncoderConfig
from .tensors import ParamStore

POOLINGS = ("mean", "max", "first")


def sentence_source_prob(token_probs: np.ndarray, pooling: str = "mean") -> float:
    """Pool per-token discriminator probabilities to one sentence-level probability."""
    p = np.asarray(token_probs, dtype=np.float64).ravel()
    if p.size == 0:
        raise EmptyInput("no token probabilities to pool")
    if pooling == "mean":
        return float(p.mean())
    if pooling == "max":
        return float(p.max())
    if pooling == "first":
        return float(p[0])
    raise ValueError(f"unknown pooling {pooling!r}; expected one of {POOLINGS}")


def l_score(source_prob: float) -> float:
    """Language-independence score 1 - |p - 0.5|: maximal at p = 0.5."""
    if not 0.0 <= source_prob <= 1.0:
        raise ValueError(f"probability out of range: {source_prob}")
    return 1.0 - abs(source_prob - 0.5)


@dataclass(frozen=True)
class ScoredSentence:
    sentence_id: int
    source_prob: float
    l_score: float


@dataclass(frozen=True)
class PseudoLabeledSentence:
    """A target sentence with teacher soft labels and its independence score."""

    sentence: Sentence            # gold tags stripped
    soft_labels: np.ndarray       # (N, n_tags), row-stochastic
    source_prob: float
    l_score: float
    confidence_sum: float         # sum over tokens of the max soft-label entry
    seed_index: int = 0

    @property
    def sentence_id(self) -> int:
        return self.sentence.id


def _forward_chunks(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
                    corpus: Corpus, batch_size: int = 64):
    """Yield (sentence, soft_labels, token_probs) with batched forwards."""
    sentences = list(corpus)
    for lo in range(0, len(sentences), batch_size):
        chunk = sentences[lo:lo + batch_size]
        ids = [vocab.encode(s.tokens) for s in chunk]
        features = models.encode_batch(store, enc_cfg, ids)
        soft = models.ner_head(store, features).data
        probs = models.discriminate(store, features).data.ravel()
        offset = 0
        for s in chunk:
            yield s, soft[offset:offset + len(s)].copy(), probs[offset:offset + len(s)].copy()
            offset += len(s)


def score_sentences(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
                    corpus: Corpus, pooling: str = "mean") -> list[ScoredSentence]:
    """Sentence-level discriminator probabilities and l_scores, corpus order."""
    out = []
    for sentence, _, probs in _forward_chunks(store, enc_cfg, vocab, corpus):
        p = sentence_source_prob(probs, pooling)
        out.append(ScoredSentence(sentence.id, p, l_score(p)))
    return out


def pseudo_label(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
                 target: Corpus, pooling: str = "mean", seed_index: int = 0) -> list[PseudoLabeledSentence]:
    """Teacher soft labels plus discriminator scores for every target sentence.

    Gold tags are stripped from the embedded sentences so downstream
    training can never observe them.
    """
    out = []
    for sentence, soft, probs in _forward_chunks(store, enc_cfg, vocab, target):
        p = sentence_source_prob(probs, pooling)
        out.append(PseudoLabeledSentence(
            sentence=replace(sentence, gold_tags=None),
            soft_labels=soft,
            source_prob=p,
            l_score=l_score(p),
            confidence_sum=float(soft.max(axis=1).sum()),
            seed_index=seed_index,
        ))
    return out


def merge_seeds(per_seed: Sequence[Sequence[PseudoLabeledSentence]]) -> list[PseudoLabeledSentence]:
    """Keep, per sentence, the seed whose label sequence has the highest confidence sum.

    Ties go to the lowest seed index; the winning seed also supplies the
    sentence-level source probability.
    """
    if not per_seed:
        raise EmptyInput("no per-seed outputs to merge")
    ids = [tuple(p.sentence_id for p in run) for run in per_seed]
    if any(run_ids != ids[0] for run_ids in ids[1:]):
        raise AlignmentError("per-seed outputs cover different sentences or orders")
    merged = []
    for items in zip(*per_seed):
        best = max(items, key=lambda p: (p.confidence_sum, -p.seed_index))
        merged.append(best)
    return merged


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple[PseudoLabeledSentence, ...]
    rejected: tuple[PseudoLabeledSentence, ...]
    rho: float


def rank_and_split(scored: Sequence[tuple[int, float]], rho: float) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Ids of the top-ceil(rho*n) items by (l_score desc, id asc), and the rest."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    if not scored:
        raise EmptyInput("nothing to select from")
    ranked = sorted(scored, key=lambda item: (-item[1], item[0]))
    cut = math.ceil(rho * len(ranked))
    return tuple(i for i, _ in ranked[:cut]), tuple(i for i, _ in ranked[cut:])


def select_top_rho(items: Sequence[PseudoLabeledSentence], rho: float = 0.8) -> SelectionResult:
    """Stable top-rho selection by l_score; see rank_and_split for the rule."""
    selected_ids, _ = rank_and_split([(p.sentence_id, p.l_score) for p in items], rho)
    chosen = set(selected_ids)
    return SelectionResult(
        selected=tuple(p for p in items if p.sentence_id in chosen),
        rejected=tuple(p for p in items if p.sentence_id not in chosen),
        rho=rho,
    )


# ---------------------------------------------------------------------------
# On-disk form: one JSON record per sentence plus a binary soft-label sidecar.

_SOFT_MAGIC = b"APSOFT1\n"


def write_manifest(result: SelectionResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for selected, items in ((True, result.selected), (False, result.rejected)):
            for p in items:
                fh.write(json.dumps({
                    "id": p.sentence_id,
                    "source_prob": p.source_prob,
                    "l_score": p.l_score,
                    "selected": selected,
                    "seed_index": p.seed_index,
                    "confidence_sum": p.confidence_sum,
                }, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_soft_labels(items: Sequence[PseudoLabeledSentence], path) -> None:
    with open(path, "wb") as fh:
        fh.write(_SOFT_MAGIC)
        fh.write(f"count {len(items)}\n".encode())
        for p in items:
            rows, cols = p.soft_labels.shape
            fh.write(f"labels {p.sentence_id} {rows} {cols}\n".encode())
            fh.write(np.ascontiguousarray(p.soft_labels, dtype=np.float64).tobytes())


def read_soft_labels(path) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.readline() != _SOFT_MAGIC:
            raise ShapeError(f"{path}: not a soft-label container")
        count = int(fh.readline().split()[1])
        for _ in range(count):
            _, sid, rows, cols = fh.readline().split()
            data = np.frombuffer(fh.read(8 * int(rows) * int(cols)), dtype=np.float64)
            out[int(sid)] = data.reshape(int(rows), int(cols)).copy()
    return out
