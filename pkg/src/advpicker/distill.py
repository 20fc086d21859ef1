"""Knowledge distillation: train a student on selected soft labels with MSE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import evaluate, models, tensors as T
from .corpus import Corpus, Vocabulary
from .errors import ConfigError, EmptySubset, LabelLeakError, ShapeError
from .models import ENCODER, NER_HEAD, EncoderConfig
from .selection import PseudoLabeledSentence
from .tensors import ParamStore, Tensor


@dataclass(frozen=True)
class KDConfig:
    lr: float = 6e-5
    epochs: int = 10
    batch_size: int = 32
    seed: int = 13
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"bad distillation config: {self}")


def loss_kd(student_probs: Tensor, soft_labels: np.ndarray) -> Tensor:
    """Squared error to the soft labels, summed per token, averaged over tokens."""
    soft = np.asarray(soft_labels, dtype=np.float64)
    if soft.shape != student_probs.data.shape:
        raise ShapeError(f"loss_kd: {student_probs.data.shape} vs {soft.shape}")
    return T.mse(student_probs, Tensor(soft))


@dataclass
class KDEpochRecord:
    epoch: int
    loss_kd: float
    dev_f1: float

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class KDResult:
    records: list[KDEpochRecord]
    best_epoch: int
    best_dev_f1: float


def train_student(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
                  subset: Sequence[PseudoLabeledSentence], target_dev: Corpus,
                  cfg: KDConfig) -> KDResult:
    """Minimize the soft-label MSE over the subset; keep the best dev-F1 epoch.

    The training sentences must not carry gold tags; passing rho = 1.0
    upstream makes this the all-data variant with no code change here.
    """
    if not subset:
        raise EmptySubset("no pseudo-labeled sentences to distill from")
    for p in subset:
        if p.sentence.gold_tags is not None:
            raise LabelLeakError(f"sentence {p.sentence_id} carries gold tags into distillation")

    rng = np.random.default_rng(cfg.seed)
    items = list(subset)
    steps = (len(items) + cfg.batch_size - 1) // cfg.batch_size
    records: list[KDEpochRecord] = []
    best = (-1.0, -1)
    best_params: dict | None = None
    t = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(items))
        total = 0.0
        for step in range(steps):
            batch = [items[i] for i in order[step * cfg.batch_size:(step + 1) * cfg.batch_size]]
            ids = [vocab.encode(p.sentence.tokens) for p in batch]
            soft = np.concatenate([p.soft_labels for p in batch], axis=0)
            probs = models.ner_head(store, models.encode_batch(store, enc_cfg, ids))
            loss = loss_kd(probs, soft)
            T.backward(loss)
            t += 1
            T.adamw_step(store, (ENCODER, NER_HEAD), cfg.lr, t, cfg.weight_decay)
            store.zero_grads()
            total += loss.item()

        dev_f1 = evaluate.corpus_f1(store, enc_cfg, vocab, target_dev).f1
        records.append(KDEpochRecord(epoch=epoch, loss_kd=float(total / steps), dev_f1=float(dev_f1)))
        if dev_f1 > best[0]:
            best = (dev_f1, epoch)
            best_params = store.export_arrays()

    if best_params is not None:
        store.import_arrays(best_params)
    return KDResult(records, best_epoch=best[1], best_dev_f1=best[0])
