"""Command-line entry point.

Pipeline: ``prepare`` -> ``train-kge`` -> ``augment`` -> ``train`` ->
``generate`` / ``evaluate`` / ``perturb``, plus the ``ablate`` driver.
Every command writes a manifest next to its outputs and is bitwise
reproducible given the same inputs and seed.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import corpus as corpus_io
from .ablate import DEFAULT_NOISE_KINDS, run_ablation
from .corpus import Vocabulary, build_vocab, load_corpus, load_kg, save_corpus, save_kg
from .entity import EntityInventory
from .kge import TransRConfig, TransRParams, train_transr
from .manifest import file_sha256, write_manifest
from .metrics import evaluate
from .model import (
    GenerationStrategy,
    KGDModel,
    ModelConfig,
    load_checkpoint,
    paper_config,
    save_checkpoint,
)
from .neggen import make_negatives, save_edit_logs
from .posgen import RulePhraser, make_positives
from .robustness import Perturbation, PerturbationSpec, perturb
from .train import TrainConfig, build_groups, paper_train_config, train_loop

log = logging.getLogger("enco")


def cache_dir() -> Path:
    return Path(os.environ.get("ENCO_CACHE_DIR", Path.home() / ".cache" / "enco"))


def vocab_hash(vocab: Vocabulary) -> str:
    return hashlib.sha256("\n".join(vocab.id_to_token).encode("utf-8")).hexdigest()


def _load_inventory(args) -> EntityInventory:
    triples = load_kg(args.kg)
    type_map = EntityInventory.load_type_map(args.type_map) if args.type_map else None
    return EntityInventory.from_triples(triples, type_map)


def _load_phraser(args) -> RulePhraser:
    synonyms = RulePhraser.load_synonyms(args.synonyms) if args.synonyms else {}
    return RulePhraser(synonyms)


def _resolve_configs(args, vocab_size: int) -> tuple[ModelConfig, TrainConfig]:
    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.profile == "paper":
        model_cfg = paper_config(vocab_size, **file_cfg.get("model", {}))
        train_cfg = paper_train_config(**file_cfg.get("train", {}))
    else:
        model_cfg = ModelConfig(vocab_size=vocab_size, **file_cfg.get("model", {}))
        train_cfg = TrainConfig(**file_cfg.get("train", {}))
    overrides = {}
    for flag in ("alpha", "epochs", "lr"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    if getattr(args, "positives", None) is not None:
        overrides["n_pos"] = args.positives
    if getattr(args, "negatives", None) is not None:
        overrides["n_neg"] = args.negatives
    overrides["seed"] = args.seed
    train_cfg = dataclasses.replace(train_cfg, **overrides)
    if "alpha" in overrides:
        model_cfg = dataclasses.replace(model_cfg, alpha=overrides["alpha"])
    return model_cfg, train_cfg


def _kge_for_corpus(args, inputs: list) -> TransRParams:
    """Load the given embedding checkpoint, or train and cache one."""
    if args.kge:
        inputs.append(args.kge)
        return TransRParams.load(args.kge)
    cache = cache_dir()
    cache.mkdir(parents=True, exist_ok=True)
    key = file_sha256(args.kg)[:16]
    cached = cache / f"kge-{key}-seed{args.seed}.enco"
    if not cached.exists():
        log.info("training knowledge embeddings into cache %s", cached)
        params, _ = train_transr(load_kg(args.kg),
                                 TransRConfig(dim_entity=50, dim_relation=50,
                                              seed=args.seed))
        params.save(cached)
    inputs.append(cached)
    return TransRParams.load(cached)


def cmd_prepare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = load_corpus(getattr(args, "in"))
    if not samples:
        raise corpus_io.CorpusError("empty corpus")
    triples = load_kg(args.kg)
    inventory = EntityInventory.from_triples(
        triples, EntityInventory.load_type_map(args.type_map) if args.type_map else None
    )
    corpus_path, kg_path, inv_path = out / "corpus.jsonl", out / "kg.tsv", out / "inventory.tsv"
    save_corpus(samples, corpus_path)
    save_kg(triples, kg_path)
    with open(inv_path, "w", encoding="utf-8") as f:
        for surface in sorted(inventory.surfaces()):
            f.write(f"{surface}\t{inventory.type_of[surface]}\n")
    inputs = [getattr(args, "in"), args.kg] + ([args.type_map] if args.type_map else [])
    write_manifest(out / "manifest.json", "prepare", vars_config(args), [args.seed],
                   inputs, [corpus_path, kg_path, inv_path])
    return 0


def cmd_augment(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = load_corpus(getattr(args, "in"))
    inventory = _load_inventory(args)
    phraser = _load_phraser(args)
    positives, negatives, logs = [], [], []
    for sample in samples:
        positives.extend(
            make_positives(sample, args.positives, inventory, phraser, args.seed))
        negs, neg_logs = make_negatives(sample, args.negatives, inventory, args.seed)
        negatives.extend(negs)
        logs.extend(neg_logs)
    pos_path, neg_path = out / "positives.jsonl", out / "negatives.jsonl"
    log_path = out / "edit_logs.jsonl"
    save_corpus(positives, pos_path)
    save_corpus(negatives, neg_path)
    save_edit_logs(logs, log_path)
    inputs = [getattr(args, "in"), args.kg]
    inputs += [p for p in (args.type_map, args.synonyms) if p]
    write_manifest(out / "manifest.json", "augment", vars_config(args), [args.seed],
                   inputs, [pos_path, neg_path, log_path])
    return 0


def cmd_train_kge(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg = TransRConfig(dim_entity=args.dim_entity, dim_relation=args.dim_relation,
                       epochs=args.epochs, lr=args.lr, margin=args.margin,
                       seed=args.seed)
    params, losses = train_transr(load_kg(args.kg), cfg)
    params.save(out)
    log.info("final embedding loss %.4f", losses[-1])
    write_manifest(out.parent / (out.name + ".manifest.json"), "train-kge",
                   vars_config(args), [args.seed], [args.kg], [out])
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(1)  # bitwise determinism across reruns
    samples = load_corpus(getattr(args, "in"))
    inventory = _load_inventory(args)
    phraser = _load_phraser(args)
    vocab = build_vocab(samples)
    vocab.save(out / "vocab.txt")
    inputs = [getattr(args, "in"), args.kg]
    inputs += [p for p in (args.type_map, args.synonyms, args.config) if p]
    kge_params = _kge_for_corpus(args, inputs)
    model_cfg, train_cfg = _resolve_configs(args, len(vocab))
    model_cfg = dataclasses.replace(model_cfg, kge_dim=kge_params.triple_dim)
    metrics_path = out / "metrics.jsonl"
    if metrics_path.exists():
        metrics_path.unlink()
    groups = build_groups(samples, inventory, phraser, train_cfg)
    torch.manual_seed(train_cfg.seed)
    model = KGDModel(model_cfg)
    train_loop(groups, model, vocab, kge_params, train_cfg, out_dir=out)
    final = out / "model.enco"
    save_checkpoint(model, final, vocab_hash=vocab_hash(vocab))
    write_manifest(out / "manifest.json", "train", vars_config(args),
                   [train_cfg.seed], inputs, [final, metrics_path, out / "vocab.txt"])
    return 0


def _load_model_resources(args):
    model, meta = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    if meta.get("vocab_hash") and meta["vocab_hash"] != vocab_hash(vocab):
        raise SystemExit("vocabulary file does not match the checkpoint")
    return model, vocab, TransRParams.load(args.kge)


def cmd_generate(args) -> int:
    from .model import generate as generate_tokens

    model, vocab, kge_params = _load_model_resources(args)
    samples = load_corpus(getattr(args, "in"))
    strategy = GenerationStrategy(args.strategy, args.k, args.seed)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as f:
        for sample in samples:
            tokens = generate_tokens(model, sample, vocab, kge_params, strategy,
                                     max_len=args.max_len)
            f.write(json.dumps(
                {"sample_id": sample.sample_id,
                 "response": corpus_io.detokenize(tokens)},
                ensure_ascii=False) + "\n")
    write_manifest(out.parent / (out.name + ".manifest.json"), "generate",
                   vars_config(args), [args.seed],
                   [getattr(args, "in"), args.checkpoint, args.kge, args.vocab], [out])
    return 0


def cmd_evaluate(args) -> int:
    model, vocab, kge_params = _load_model_resources(args)
    samples = load_corpus(getattr(args, "in"))
    report = evaluate(model, samples, vocab, kge_params)
    out = Path(args.out)
    report.save(out)
    log.info("ppl %.3f bleu-1 %.2f distinct-1 %.2f",
             report.ppl, report.bleu[0], report.distinct[0])
    write_manifest(out.parent / (out.name + ".manifest.json"), "evaluate",
                   vars_config(args), [],
                   [getattr(args, "in"), args.checkpoint, args.kge, args.vocab], [out])
    return 0


def cmd_perturb(args) -> int:
    samples = load_corpus(getattr(args, "in"))
    kind = Perturbation(args.kind)
    spec = PerturbationSpec(kind, args.rate, args.seed)
    vocab = Vocabulary.load(args.vocab) if args.vocab else (
        build_vocab(samples) if kind is Perturbation.WORD_REPLACE else None)
    synonyms = RulePhraser.load_synonyms(args.synonyms) if args.synonyms else None
    inventory = _load_inventory(args) if args.kg else None
    phraser = RulePhraser(synonyms or {})
    perturbed = [
        perturb(s, spec, vocab=vocab, synonyms=synonyms, inventory=inventory,
                phraser=phraser)
        for s in samples
    ]
    out = Path(args.out)
    save_corpus(perturbed, out)
    inputs = [getattr(args, "in")]
    inputs += [p for p in (args.vocab, args.synonyms, args.kg, args.type_map) if p]
    write_manifest(out.parent / (out.name + ".manifest.json"), "perturb",
                   vars_config(args), [args.seed], inputs, [out])
    return 0


def cmd_ablate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(1)
    train_samples = load_corpus(getattr(args, "in"))
    eval_samples = load_corpus(args.eval) if args.eval else train_samples
    inventory = _load_inventory(args)
    synonyms = RulePhraser.load_synonyms(args.synonyms) if args.synonyms else {}
    vocab = build_vocab(train_samples + eval_samples)
    inputs = [getattr(args, "in"), args.kg]
    inputs += [p for p in (args.eval, args.type_map, args.synonyms, args.config) if p]
    kge_params = _kge_for_corpus(args, inputs)
    model_cfg, train_cfg = _resolve_configs(args, len(vocab))
    model_cfg = dataclasses.replace(model_cfg, kge_dim=kge_params.triple_dim)
    seeds = [int(s) for s in args.seeds.split(",")]
    kinds = (tuple(Perturbation(k) for k in args.kinds.split(","))
             if args.kinds else DEFAULT_NOISE_KINDS)
    run_ablation(train_samples, eval_samples, vocab, kge_params, inventory, synonyms,
                 model_cfg, train_cfg, seeds, kinds, noise_seed=args.seed, out_dir=out)
    write_manifest(out / "manifest.json", "ablate", vars_config(args), seeds,
                   inputs, [out / "ablation.json", out / "ablation.md"])
    return 0


def vars_config(args) -> dict:
    skip = {"func"}
    return {k: (str(v) if isinstance(v, Path) else v)
            for k, v in vars(args).items() if k not in skip}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enco", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("prepare", cmd_prepare, help="validate raw inputs into a workspace")
    p.add_argument("--in", required=True)
    p.add_argument("--kg", required=True)
    p.add_argument("--type-map")
    p.add_argument("--out", required=True)

    p = add("augment", cmd_augment, help="write positive/negative samples + edit logs")
    p.add_argument("--in", required=True)
    p.add_argument("--kg", required=True)
    p.add_argument("--type-map")
    p.add_argument("--synonyms")
    p.add_argument("--positives", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--out", required=True)

    p = add("train-kge", cmd_train_kge, help="train TransR embeddings for a KG")
    p.add_argument("--kg", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim-entity", type=int, default=200)
    p.add_argument("--dim-relation", type=int, default=200)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--margin", type=float, default=1.0)

    p = add("train", cmd_train, help="train the dialogue model")
    p.add_argument("--in", required=True)
    p.add_argument("--kg", required=True)
    p.add_argument("--kge", help="embedding checkpoint; trained+cached when omitted")
    p.add_argument("--type-map")
    p.add_argument("--synonyms")
    p.add_argument("--config", help="JSON file with 'model'/'train' sections")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--positives", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", required=True)

    p = add("generate", cmd_generate, help="decode responses for a corpus")
    p.add_argument("--in", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kge", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--strategy", choices=["greedy", "top-k"], default="greedy")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, help="score a checkpoint on a corpus")
    p.add_argument("--in", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kge", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)

    p = add("perturb", cmd_perturb, help="write a noisy copy of a corpus")
    p.add_argument("--in", required=True)
    p.add_argument("--kind", required=True,
                   choices=[k.value for k in Perturbation])
    p.add_argument("--rate", type=float)
    p.add_argument("--vocab")
    p.add_argument("--synonyms")
    p.add_argument("--kg")
    p.add_argument("--type-map")
    p.add_argument("--out", required=True)

    p = add("ablate", cmd_ablate, help="train and compare objective ablations")
    p.add_argument("--in", required=True)
    p.add_argument("--eval")
    p.add_argument("--kg", required=True)
    p.add_argument("--kge")
    p.add_argument("--type-map")
    p.add_argument("--synonyms")
    p.add_argument("--config")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--positives", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--kinds", help="comma-separated perturbation kinds")
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (corpus_io.CorpusError, ValueError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
