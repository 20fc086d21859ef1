"""Command-line pipeline: generate | train-teacher | select | distill | eval.

Every command is a pure function of (config, seed) writing files under
the configured output directory, plus a per-command artifact manifest
with content hashes. Commands refuse to overwrite checkpoints unless
--force is given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import adversarial, distill, evaluate, models, selection
from .adversarial import AdvConfig
from .config import ExperimentConfig, load_config
from .corpus import SOURCE, TARGET, Corpus, Vocabulary, generate_bilingual, read_conll, write_conll
from .errors import ConfigError, EmptyInput
from .evaluate import ProbeConfig
from .models import DiscriminatorConfig, EncoderConfig
from .selection import PseudoLabeledSentence
from .tensors import ParamStore

SPLITS = ("train", "dev", "test")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, paths: list[Path]) -> None:
    manifest_dir = out / "manifests"
    manifest_dir.mkdir(parents=True, exist_ok=True)
    with open(manifest_dir / f"{command}.jsonl", "w", encoding="utf-8") as fh:
        for p in sorted(paths):
            fh.write(json.dumps({"path": str(p.relative_to(out)), "sha256": _sha256(p)},
                                sort_keys=True) + "\n")


def _data_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.data.conll_dir) if cfg.data.conll_dir else cfg.out_path / "data"


def _load_split(cfg: ExperimentConfig, language: str, split: str) -> Corpus:
    path = _data_dir(cfg) / f"{language}.{split}.conll"
    if not path.exists():
        raise ConfigError(f"missing corpus file {path}; run 'generate' first")
    return read_conll(path, cfg.data.synth_spec("train").label_set, language, split)


def _vocab(cfg: ExperimentConfig) -> Vocabulary:
    return Vocabulary.from_corpora([_load_split(cfg, SOURCE, "train"), _load_split(cfg, TARGET, "train")])


def _enc_cfg(cfg: ExperimentConfig, vocab: Vocabulary) -> EncoderConfig:
    return EncoderConfig(vocab_size=len(vocab), embed_dim=cfg.embed_dim, window=cfg.window)


def _teacher_ckpt(out: Path, seed: int, adversarial_on: bool) -> Path:
    suffix = "" if adversarial_on else "-noadv"
    return out / "checkpoints" / f"teacher-s{seed}{suffix}.ckpt"


def _student_ckpt(out: Path, seed: int, all_data: bool) -> Path:
    suffix = "-alldata" if all_data else ""
    return out / "checkpoints" / f"student-s{seed}{suffix}.ckpt"


def cmd_generate(cfg: ExperimentConfig) -> list[Path]:
    """Write the six synthetic corpus files plus the shared-fraction sidecar."""
    out = cfg.out_path
    data_dir = out / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    fractions: dict[str, dict[str, list[float]]] = {}
    for split in SPLITS:
        source, target = generate_bilingual(cfg.data.synth_spec(split), split)
        for language, corpus in ((SOURCE, source), (TARGET, target)):
            path = data_dir / f"{language}.{split}.conll"
            write_conll(corpus, path)
            written.append(path)
            fractions.setdefault(split, {})[language] = [
                s.shared_fraction for s in corpus
            ]
    sidecar = data_dir / "fractions.json"
    sidecar.write_text(json.dumps(fractions, sort_keys=True), encoding="utf-8")
    written.append(sidecar)
    _write_manifest(out, "generate", written)
    return written


def cmd_train_teacher(cfg: ExperimentConfig, seed: int, adversarial_on: bool = True,
                      force: bool = False) -> Path:
    """Train one teacher; write its checkpoint and per-epoch metrics."""
    out = cfg.out_path
    ckpt = _teacher_ckpt(out, seed, adversarial_on)
    if ckpt.exists() and not force:
        raise ConfigError(f"{ckpt} exists; pass --force to overwrite")

    source = _load_split(cfg, SOURCE, "train")
    target = _load_split(cfg, TARGET, "train")
    source_dev = _load_split(cfg, SOURCE, "dev")
    target_dev = _load_split(cfg, TARGET, "dev")
    vocab = _vocab(cfg)
    enc_cfg = _enc_cfg(cfg, vocab)

    adv_cfg = replace(cfg.adv, seed=seed, lr_adv=cfg.adv.lr_adv if adversarial_on else 0.0)
    store = models.init_teacher(enc_cfg, DiscriminatorConfig(cfg.discriminator_hidden),
                                len(source.label_set), seed)

    probe_cfg = replace(cfg.probe, seed=seed)

    def probe_fn(s: ParamStore) -> float:
        return evaluate.probe_discriminator(s, enc_cfg, vocab, (source, target),
                                            (source_dev, target_dev), probe_cfg)

    result = adversarial.train_teacher(store, enc_cfg, vocab, source, target, target_dev,
                                       adv_cfg, source_dev=source_dev, probe_fn=probe_fn)

    ckpt.parent.mkdir(parents=True, exist_ok=True)
    store.save(ckpt)
    metrics = out / "metrics" / (ckpt.stem.replace("teacher-", "teacher-metrics-") + ".jsonl")
    metrics.parent.mkdir(parents=True, exist_ok=True)
    with open(metrics, "w", encoding="utf-8") as fh:
        for record in result.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    _write_manifest(out, f"train-teacher-s{seed}" + ("" if adversarial_on else "-noadv"),
                    [ckpt, metrics])
    return ckpt


def _merged_pseudo_labels(cfg: ExperimentConfig, corpus: Corpus, vocab: Vocabulary,
                          enc_cfg: EncoderConfig, seeds: list[int]) -> list[PseudoLabeledSentence]:
    per_seed = []
    for index, seed in enumerate(seeds):
        ckpt = _teacher_ckpt(cfg.out_path, seed, adversarial_on=True)
        if not ckpt.exists():
            raise ConfigError(f"missing teacher checkpoint {ckpt}; run 'train-teacher' first")
        store = ParamStore.load(ckpt)
        per_seed.append(selection.pseudo_label(store, enc_cfg, vocab, corpus,
                                               pooling=cfg.selection.pooling, seed_index=index))
    return selection.merge_seeds(per_seed)


def cmd_select(cfg: ExperimentConfig, rho: float | None = None) -> Path:
    """Ensemble the teachers' soft labels and write the selection manifest."""
    out = cfg.out_path
    target = _load_split(cfg, TARGET, "train")
    vocab = _vocab(cfg)
    enc_cfg = _enc_cfg(cfg, vocab)
    merged = _merged_pseudo_labels(cfg, target, vocab, enc_cfg, list(cfg.seeds))
    result = selection.select_top_rho(merged, rho if rho is not None else cfg.selection.rho)

    sel_dir = out / "selection"
    sel_dir.mkdir(parents=True, exist_ok=True)
    manifest = sel_dir / "manifest.jsonl"
    soft = sel_dir / "soft_labels.bin"
    selection.write_manifest(result, manifest)
    selection.write_soft_labels(list(result.selected) + list(result.rejected), soft)
    _write_manifest(out, "select", [manifest, soft])
    return manifest


def _subset_from_files(cfg: ExperimentConfig, all_data: bool) -> list[PseudoLabeledSentence]:
    out = cfg.out_path
    manifest_path = out / "selection" / "manifest.jsonl"
    if not manifest_path.exists():
        raise ConfigError(f"missing selection manifest {manifest_path}; run 'select' first")
    rows = selection.read_manifest(manifest_path)
    soft = selection.read_soft_labels(out / "selection" / "soft_labels.bin")
    target = _load_split(cfg, TARGET, "train").by_id()
    subset = []
    for row in rows:
        if not (all_data or row["selected"]):
            continue
        sentence = replace(target[row["id"]], gold_tags=None)
        subset.append(PseudoLabeledSentence(
            sentence=sentence,
            soft_labels=soft[row["id"]],
            source_prob=row["source_prob"],
            l_score=row["l_score"],
            confidence_sum=row["confidence_sum"],
            seed_index=row["seed_index"],
        ))
    subset.sort(key=lambda p: p.sentence_id)
    return subset


def cmd_distill(cfg: ExperimentConfig, seed: int, all_data: bool = False,
                force: bool = False) -> Path:
    """Train a student on the selected (or all) pseudo-labeled sentences."""
    out = cfg.out_path
    ckpt = _student_ckpt(out, seed, all_data)
    if ckpt.exists() and not force:
        raise ConfigError(f"{ckpt} exists; pass --force to overwrite")

    subset = _subset_from_files(cfg, all_data)
    if not subset:
        raise EmptyInput("selection manifest yields no training sentences")
    target_dev = _load_split(cfg, TARGET, "dev")
    vocab = _vocab(cfg)
    enc_cfg = _enc_cfg(cfg, vocab)
    store = models.init_student(enc_cfg, len(target_dev.label_set), seed)
    result = distill.train_student(store, enc_cfg, vocab, subset, target_dev,
                                   replace(cfg.kd, seed=seed))

    ckpt.parent.mkdir(parents=True, exist_ok=True)
    store.save(ckpt)
    metrics = out / "metrics" / (ckpt.stem.replace("student-", "student-metrics-") + ".jsonl")
    metrics.parent.mkdir(parents=True, exist_ok=True)
    with open(metrics, "w", encoding="utf-8") as fh:
        for record in result.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    _write_manifest(out, f"distill-s{seed}" + ("-alldata" if all_data else ""), [ckpt, metrics])
    return ckpt


def cmd_eval(cfg: ExperimentConfig, checkpoint: Path | None = None, split: bool = False,
             no_kd: bool = False, rho: float | None = None) -> Path:
    """Evaluate a checkpoint (or the merged teachers with --no-kd) on target test."""
    out = cfg.out_path
    test = _load_split(cfg, TARGET, "test")
    vocab = _vocab(cfg)
    enc_cfg = _enc_cfg(cfg, vocab)
    rho = rho if rho is not None else cfg.selection.rho
    report: dict = {"rho": rho}

    if no_kd:
        merged = _merged_pseudo_labels(cfg, test, vocab, enc_cfg, list(cfg.seeds))
        pred = {p.sentence_id: evaluate.viterbi_decode(p.soft_labels, test.label_set)
                for p in merged}
        name = "ensemble-no-kd"

        def predict(part: Corpus) -> list[list[int]]:
            return [pred[s.id] for s in part]
    else:
        if checkpoint is None:
            checkpoint = _student_ckpt(out, cfg.seeds[0], all_data=False)
        checkpoint = Path(checkpoint)
        if not checkpoint.exists():
            raise ConfigError(f"missing checkpoint {checkpoint}")
        store = ParamStore.load(checkpoint)
        name = checkpoint.stem

        def predict(part: Corpus) -> list[list[int]]:
            return evaluate.decode_corpus(store, enc_cfg, vocab, part)

    full = evaluate.entity_f1(
        evaluate.gold_spans(test),
        [evaluate.extract_spans(t, test.label_set) for t in predict(test)],
    )
    report["model"] = name
    report["test"] = full.to_dict()

    if split:
        teacher_ckpt = _teacher_ckpt(out, cfg.seeds[0], adversarial_on=True)
        if not teacher_ckpt.exists():
            raise ConfigError(f"--split needs teacher checkpoint {teacher_ckpt}")
        teacher = ParamStore.load(teacher_ckpt)
        parts = evaluate.split_eval(test, teacher, enc_cfg, vocab, rho, predict,
                                    pooling=cfg.selection.pooling)
        report["selected"] = parts.selected.to_dict()
        report["selected_size"] = len(parts.selected_ids)
        report["other"] = parts.other.to_dict() if parts.other else None
        report["other_size"] = len(parts.other_ids)

    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    path = reports_dir / f"eval-{name}{'-split' if split else ''}.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    _write_manifest(out, f"eval-{name}{'-split' if split else ''}", [path])
    print(f"{name}: test F1 {full.f1:.4f} (P {full.precision:.4f} R {full.recall:.4f})")
    if split:
        other_f1 = report["other"]["f1"] if report["other"] else float("nan")
        print(f"  selected F1 {report['selected']['f1']:.4f}  other F1 {other_f1:.4f}")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advpicker",
                                     description="Adversarially picked pseudo-label pipeline")
    parser.add_argument("--config", type=Path, default=None, help="key = value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", help="write synthetic bilingual corpora")

    p = sub.add_parser("train-teacher", help="adversarially train one teacher")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--adversarial", choices=("on", "off"), default="on")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("select", help="ensemble teachers and pick the top-rho subset")
    p.add_argument("--rho", type=float, default=None)

    p = sub.add_parser("distill", help="train a student on the selection")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--all-data", action="store_true")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("eval", help="score a checkpoint on the target test set")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--split", action="store_true")
    p.add_argument("--no-kd", action="store_true")
    p.add_argument("--rho", type=float, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train-teacher":
            seed = args.seed if args.seed is not None else cfg.seeds[0]
            cmd_train_teacher(cfg, seed, adversarial_on=args.adversarial == "on",
                              force=args.force)
        elif args.command == "select":
            cmd_select(cfg, rho=args.rho)
        elif args.command == "distill":
            seed = args.seed if args.seed is not None else cfg.seeds[0]
            cmd_distill(cfg, seed, all_data=args.all_data, force=args.force)
        elif args.command == "eval":
            cmd_eval(cfg, checkpoint=args.checkpoint, split=args.split,
                     no_kd=args.no_kd, rho=args.rho)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
