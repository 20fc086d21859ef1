"""Forward definitions: shared encoder, NER head, language discriminator, student.

The encoder maps token ids to contextual features by mixing each token's
embedding with the mean embedding of its +/-w neighbourhood through one
learned linear layer and a relu. The student is the same architecture
family on its own ParamStore; it never shares parameters with a teacher.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensors as T
from .errors import ShapeError
from .tensors import ParamStore, Tensor

ENCODER = "encoder"
NER_HEAD = "ner"
DISCRIMINATOR = "discriminator"


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    embed_dim: int = 64
    window: int = 2

    def __post_init__(self):
        if self.vocab_size < 1 or self.embed_dim < 1 or self.window < 0:
            raise ShapeError(f"bad encoder config: {self}")


@dataclass(frozen=True)
class DiscriminatorConfig:
    hidden_dim: int = 64
    out_dim: int = 1

    def __post_init__(self):
        if self.hidden_dim < 1 or self.out_dim != 1:
            raise ShapeError(f"bad discriminator config: {self}")


def init_encoder(store: ParamStore, cfg: EncoderConfig) -> None:
    d = cfg.embed_dim
    store.add_weight(ENCODER, "embedding", (cfg.vocab_size, d))
    store.add_weight(ENCODER, "w_self", (d, d))
    store.add_weight(ENCODER, "w_context", (d, d))
    store.add_bias(ENCODER, "b_mix", d)


def init_ner_head(store: ParamStore, embed_dim: int, n_tags: int) -> None:
    store.add_weight(NER_HEAD, "w", (embed_dim, n_tags))
    store.add_bias(NER_HEAD, "b", n_tags)


def init_discriminator(store: ParamStore, embed_dim: int, cfg: DiscriminatorConfig) -> None:
    store.add_weight(DISCRIMINATOR, "w_hidden", (embed_dim, cfg.hidden_dim))
    store.add_weight(DISCRIMINATOR, "w_out", (cfg.hidden_dim, cfg.out_dim))


def init_teacher(enc_cfg: EncoderConfig, dis_cfg: DiscriminatorConfig, n_tags: int, seed: int) -> ParamStore:
    store = ParamStore(seed)
    init_encoder(store, enc_cfg)
    init_ner_head(store, enc_cfg.embed_dim, n_tags)
    init_discriminator(store, enc_cfg.embed_dim, dis_cfg)
    return store


def init_student(enc_cfg: EncoderConfig, n_tags: int, seed: int) -> ParamStore:
    store = ParamStore(seed)
    init_encoder(store, enc_cfg)
    init_ner_head(store, enc_cfg.embed_dim, n_tags)
    return store


def window_matrix(lengths: Sequence[int], window: int) -> np.ndarray:
    """Block-diagonal row-stochastic matrix averaging each +/-window neighbourhood.

    Blocks never cross sentence boundaries, so batched encoding equals
    per-sentence encoding row for row.
    """
    total = int(sum(lengths))
    mat = np.zeros((total, total))
    offset = 0
    for n in lengths:
        for i in range(n):
            lo = max(0, i - window)
            hi = min(n - 1, i + window)
            mat[offset + i, offset + lo:offset + hi + 1] = 1.0 / (hi - lo + 1)
        offset += n
    return mat


def encode_batch(store: ParamStore, cfg: EncoderConfig, batch_ids: Sequence[np.ndarray]) -> Tensor:
    """Contextual features for a batch of sentences, rows concatenated in order."""
    ids = np.concatenate([np.asarray(s, dtype=np.intp) for s in batch_ids])
    if ids.size and ids.max() >= cfg.vocab_size:
        raise IndexError(f"token id {ids.max()} out of range for vocab of {cfg.vocab_size}")
    emb = T.embed(store.get(ENCODER, "embedding"), ids)
    ctx = T.matmul(Tensor(window_matrix([len(s) for s in batch_ids], cfg.window)), emb)
    mixed = T.add(
        T.matmul(emb, store.get(ENCODER, "w_self")),
        T.matmul(ctx, store.get(ENCODER, "w_context")),
    )
    return T.relu(T.add_bias(mixed, store.get(ENCODER, "b_mix")))


def encode(store: ParamStore, cfg: EncoderConfig, token_ids: np.ndarray) -> Tensor:
    """Contextual features for one sentence: an (N, embed_dim) tensor."""
    return encode_batch(store, cfg, [token_ids])


def ner_head(store: ParamStore, features: Tensor) -> Tensor:
    """Row-stochastic (N, n_tags) label distributions from token features."""
    return T.softmax(T.add_bias(T.matmul(features, store.get(NER_HEAD, "w")), store.get(NER_HEAD, "b")))


def discriminate(store: ParamStore, features: Tensor) -> Tensor:
    """Per-token probability in (0,1) that a feature row is source-language."""
    hidden = T.relu(T.matmul(features, store.get(DISCRIMINATOR, "w_hidden")))
    return T.sigmoid(T.matmul(hidden, store.get(DISCRIMINATOR, "w_out")))


def student_forward(store: ParamStore, cfg: EncoderConfig, token_ids: np.ndarray) -> Tensor:
    """Student label distributions; same family as encode + ner_head, own store."""
    return ner_head(store, encode(store, cfg, token_ids))
