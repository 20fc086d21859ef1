"""Alternating three-loss training of encoder, NER head, and discriminator.

Every batch step runs three sequential sub-steps, each touching exactly
its declared parameter set:

  1. NER loss on a labeled source batch -> encoder + NER head (lr_ner)
  2. encoder loss on a mixed batch, labels flipped -> encoder only (lr_adv)
  3. discriminator loss on a fresh mixed batch, true labels -> discriminator only (lr_adv)

Mixed batches hold equal counts of source and target sentences; the
per-token language label is 1 for source and 0 for target. The target
pool is resampled each epoch to match the source training size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import evaluate, models, tensors as T
from .corpus import Corpus, Sentence, Vocabulary
from .errors import ConfigError
from .models import DISCRIMINATOR, ENCODER, NER_HEAD, EncoderConfig
from .tensors import ParamStore, Tensor


def loss_ner(label_probs: Tensor, gold: np.ndarray) -> Tensor:
    """Mean token negative log-likelihood of the gold tags."""
    return T.nll(label_probs, gold)


def loss_dis(source_probs: Tensor, language: np.ndarray) -> Tensor:
    """Binary cross-entropy toward the true language labels."""
    return T.bce(source_probs, language)


def loss_enc(source_probs: Tensor, flipped: np.ndarray) -> Tensor:
    """Binary cross-entropy toward the flipped labels; minimizing it
    drives the encoder to fool the discriminator."""
    return T.bce(source_probs, flipped)


@dataclass(frozen=True)
class AdvConfig:
    batch_size: int = 32
    epochs: int = 10
    lr_ner: float = 6e-5
    lr_adv: float = 6e-7  # 0 disables the adversarial sub-steps
    max_len: int = 128
    dropout: float = 0.0  # accepted for config compatibility; the encoder has no dropout sites
    seed: int = 13
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.max_len < 1:
            raise ConfigError(f"bad training config: {self}")
        if self.lr_ner <= 0 or self.lr_adv < 0:
            raise ConfigError("lr_ner must be > 0 and lr_adv >= 0")


@dataclass
class EpochRecord:
    epoch: int
    loss_ner: float
    loss_enc: float
    loss_dis: float
    dev_f1: float
    source_dev_loss: float
    probe_accuracy: float | None = None

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class TrainResult:
    records: list[EpochRecord]
    best_epoch: int
    best_dev_f1: float
    purity_violations: int = 0


def _batch_arrays(sentences: Sequence[Sentence], vocab: Vocabulary, max_len: int):
    ids = [vocab.encode(s.tokens, max_len) for s in sentences]
    golds = [np.asarray(s.gold_tags[:max_len], dtype=np.intp) for s in sentences]
    return ids, np.concatenate(golds)


def _language_labels(sentences: Sequence[Sentence], max_len: int) -> np.ndarray:
    return np.concatenate([
        np.full(min(len(s), max_len), 1.0 if s.language == "source" else 0.0)
        for s in sentences
    ])


class _PurityAuditor:
    """Checks after each sub-step that frozen components kept their bytes."""

    def __init__(self, store: ParamStore, enabled: bool):
        self.store = store
        self.enabled = enabled
        self.violations = 0
        self._before: dict | None = None

    def arm(self):
        if self.enabled:
            self._before = self.store.snapshot()

    def check(self, updated: tuple[str, ...]):
        if not self.enabled:
            return
        after = self.store.snapshot()
        for key, before_bytes in self._before.items():
            frozen = key[0] not in updated
            if frozen and after[key] != before_bytes:
                self.violations += 1


def train_teacher(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
                  source: Corpus, target_unlabeled: Corpus, target_dev: Corpus,
                  cfg: AdvConfig, source_dev: Corpus | None = None,
                  audit: bool = False,
                  probe_fn: Callable[[ParamStore], float] | None = None) -> TrainResult:
    """Run the alternating loop; leaves the best-dev-F1 parameters in ``store``.

    ``target_unlabeled`` tags, if any, are ignored. ``probe_fn`` (when
    given) is called after the final epoch to fill the probe-accuracy
    metrics field. ``audit`` enables per-sub-step purity snapshots.
    """
    if not source or not target_unlabeled or not target_dev:
        raise ConfigError("training needs nonempty source, target, and dev corpora")
    if any(s.gold_tags is None for s in source):
        raise ConfigError("source corpus must carry gold tags")

    rng = np.random.default_rng(cfg.seed)
    src = list(source)
    tgt = list(target_unlabeled)
    steps = (len(src) + cfg.batch_size - 1) // cfg.batch_size
    half = max(1, cfg.batch_size // 2)
    adversarial = cfg.lr_adv > 0

    auditor = _PurityAuditor(store, audit)
    records: list[EpochRecord] = []
    best = (-1.0, -1)  # (dev F1, epoch)
    best_params: dict | None = None
    t_ner = t_enc = t_dis = 0

    for epoch in range(1, cfg.epochs + 1):
        ner_order = rng.permutation(len(src))
        # Match the source size with a fresh target sample every epoch.
        tgt_pool = [tgt[i] for i in rng.choice(len(tgt), size=len(src), replace=len(tgt) < len(src))]
        # The encoder and discriminator sub-steps sample independently
        # from the same mixed dataset: one full pass each per epoch.
        mixers = {}
        for key in ("enc", "dis"):
            mixers[key] = ([src[i] for i in rng.permutation(len(src))],
                           [tgt_pool[i] for i in rng.permutation(len(tgt_pool))], [0])

        def next_mixed(key: str) -> list[Sentence]:
            src_mix, tgt_mix, cursor = mixers[key]
            picked = []
            for _ in range(half):
                picked.append(src_mix[cursor[0] % len(src_mix)])
                picked.append(tgt_mix[cursor[0] % len(tgt_mix)])
                cursor[0] += 1
            return picked

        sums = np.zeros(3)
        for step in range(steps):
            rows = ner_order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            batch = [src[i] for i in rows]
            ids, gold = _batch_arrays(batch, vocab, cfg.max_len)

            auditor.arm()
            probs = models.ner_head(store, models.encode_batch(store, enc_cfg, ids))
            ner_loss = loss_ner(probs, gold)
            T.backward(ner_loss)
            t_ner += 1
            T.adamw_step(store, (ENCODER, NER_HEAD), cfg.lr_ner, t_ner, cfg.weight_decay)
            store.zero_grads()
            auditor.check((ENCODER, NER_HEAD))
            sums[0] += ner_loss.item()

            if not adversarial:
                continue

            mixed = next_mixed("enc")
            ids = [vocab.encode(s.tokens, cfg.max_len) for s in mixed]
            flipped = 1.0 - _language_labels(mixed, cfg.max_len)
            auditor.arm()
            p = models.discriminate(store, models.encode_batch(store, enc_cfg, ids))
            enc_loss = loss_enc(p, flipped)
            T.backward(enc_loss)
            t_enc += 1
            T.adamw_step(store, (ENCODER,), cfg.lr_adv, t_enc, cfg.weight_decay)
            store.zero_grads()  # discard discriminator grads from this sub-step
            auditor.check((ENCODER,))
            sums[1] += enc_loss.item()

            mixed = next_mixed("dis")
            ids = [vocab.encode(s.tokens, cfg.max_len) for s in mixed]
            language = _language_labels(mixed, cfg.max_len)
            auditor.arm()
            p = models.discriminate(store, models.encode_batch(store, enc_cfg, ids))
            dis_loss = loss_dis(p, language)
            T.backward(dis_loss)
            t_dis += 1
            T.adamw_step(store, (DISCRIMINATOR,), cfg.lr_adv, t_dis, cfg.weight_decay)
            store.zero_grads()
            auditor.check((DISCRIMINATOR,))
            sums[2] += dis_loss.item()

        dev_f1 = evaluate.corpus_f1(store, enc_cfg, vocab, target_dev).f1
        src_dev_loss = (
            evaluate_ner_loss(store, enc_cfg, vocab, source_dev, cfg.max_len)
            if source_dev is not None else float("nan")
        )
        probe_acc = None
        if probe_fn is not None and epoch == cfg.epochs:
            probe_acc = probe_fn(store)
        records.append(EpochRecord(
            epoch=epoch,
            loss_ner=float(sums[0] / steps),
            loss_enc=float(sums[1] / steps) if adversarial else 0.0,
            loss_dis=float(sums[2] / steps) if adversarial else 0.0,
            dev_f1=float(dev_f1),
            source_dev_loss=float(src_dev_loss),
            probe_accuracy=probe_acc,
        ))
        if dev_f1 > best[0]:
            best = (dev_f1, epoch)
            best_params = store.export_arrays()

    if best_params is not None:
        store.import_arrays(best_params)
    return TrainResult(records, best_epoch=best[1], best_dev_f1=best[0],
                       purity_violations=auditor.violations)


def evaluate_ner_loss(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
                      corpus: Corpus, max_len: int = 128, batch_size: int = 64) -> float:
    """Mean token NER loss over a labeled corpus, no parameter updates."""
    total, n_tokens = 0.0, 0
    sentences = list(corpus)
    for lo in range(0, len(sentences), batch_size):
        chunk = sentences[lo:lo + batch_size]
        ids, gold = _batch_arrays(chunk, vocab, max_len)
        probs = models.ner_head(store, models.encode_batch(store, enc_cfg, ids))
        total += loss_ner(probs, gold).item() * len(gold)
        n_tokens += len(gold)
    return total / n_tokens
