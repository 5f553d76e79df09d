"""End-to-end acceptance gate: one test per shipped guarantee.

Each test is self-contained, seeds all randomness, and asserts both the
behavioral property and its stated wall-clock budget.
"""

import json
import math
import os
import time

import pytest
import scipy.stats
import torch

from enco.ablate import run_ablation
from enco.cli import main
from enco.corpus import (
    KGDSample,
    KnowledgeTriple,
    Utterance,
    build_vocab,
    load_corpus,
    save_corpus,
    save_kg,
)
from enco.entity import EntityInventory, tag_entities
from enco.kge import TransRConfig, train_transr, transr_score
from enco.metrics import bleu_n, distinct_n, perplexity
from enco.model import KGDModel, ModelConfig, generate
from enco.neggen import EditKind, make_negatives
from enco.posgen import RulePhraser, TRUNCATION_MAX_PERCENT
from enco.rng import stream
from enco.synth import SYNONYMS, make_corpus, make_world, world_triples
from enco.train import (
    ContrastiveGroup,
    TrainConfig,
    build_group,
    build_groups,
    contrastive_loss,
    grad_check,
    total_loss,
    train_loop,
)

torch.set_num_threads(1)


class Timer:
    def __enter__(self):
        self.start = time.monotonic()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.monotonic() - self.start


def synth_setup(n_train, seed=0, world=None, kge_epochs=50):
    world = world or make_world()
    samples, _ = make_corpus(n_train, seed=seed, world=world)
    triples = world_triples(world, seed=0)
    inventory = EntityInventory.from_triples(triples, world.type_map)
    kge, _ = train_transr(
        triples, TransRConfig(dim_entity=50, dim_relation=50, epochs=kge_epochs, seed=0)
    )
    return world, samples, triples, inventory, kge


def test_1_metric_oracles(tiny_model, vocab, kge_params, sample):
    with Timer() as t:
        # three fixture corpora against hand-computed scores
        hyps = [["the", "cat"]]
        refs = [["the", "cat", "sat"]]
        assert bleu_n(hyps, refs, 1) == pytest.approx(
            100.0 * math.exp(1.0 - 1.5), abs=1e-6)  # 60.6531

        hyps2 = [["a", "b", "c", "d"], ["e", "f", "g", "h"]]
        for n in range(1, 5):
            assert bleu_n(hyps2, hyps2, n) == pytest.approx(100.0, abs=1e-6)

        hyps3 = [["the", "the", "the"]]
        refs3 = [["the", "cat"]]
        assert bleu_n(hyps3, refs3, 1) == pytest.approx(100.0 / 3, abs=1e-6)

        assert distinct_n([["a", "a", "b"]], 1) == pytest.approx(200.0 / 3, abs=1e-6)
        assert distinct_n([["a", "b"], ["c", "a"]], 1) == pytest.approx(75.0, abs=1e-6)
        assert distinct_n([["x"]], 2) == 0.0

        # a uniform model: perplexity equals the size of its support (the
        # vocabulary minus the two reserved ids whose logits are hard-masked)
        model = tiny_model.double()
        with torch.no_grad():
            model.output.weight.zero_()
            model.output.bias.zero_()
        assert perplexity([sample], model, vocab, kge_params) == pytest.approx(
            len(vocab) - 2, rel=1e-9)
    assert t.elapsed < 1.0


def test_2_gradient_check():
    with Timer() as t:
        tokens = ["alpha", "beta", "gamma", "delta", "echo", "fox",
                  "golf", "hotel", "india", "julia", "kilo", "lima"]
        sample = KGDSample(
            "g1",
            (Utterance.from_tokens("A", tokens[:5]),
             Utterance.from_tokens("B", tokens[5:9])),
            (KnowledgeTriple("alpha", "rel", "beta"),),
            Utterance.from_tokens("A", tokens[9:]),
        )
        vocab = build_vocab([sample])
        assert len(vocab) == 20
        inventory = EntityInventory({"ENT": {"alpha", "beta"}})
        kge, _ = train_transr(
            sample.knowledge,
            TransRConfig(dim_entity=4, dim_relation=4, epochs=3, seed=0),
        )
        torch.manual_seed(0)
        cfg = ModelConfig(
            vocab_size=len(vocab), d_model=8, n_enc_layers=1, n_dec_layers=1,
            n_fusion_heads=2, n_heads=2, ffn_dim=8, kge_dim=kge.triple_dim,
            max_context=16, max_response=8,
        )
        model = KGDModel(cfg).double()
        group = build_group(sample, inventory, RulePhraser(),
                            TrainConfig(n_pos=1, n_neg=1))
        report = grad_check(
            lambda: total_loss(model, group, vocab, kge, alpha=1.0),
            dict(model.named_parameters()),
        )
        worst = max(report, key=report.get)
        assert report[worst] < 1e-3, f"{worst}: {report[worst]}"
    assert t.elapsed < 60.0


def test_3_overfit_small_corpus():
    with Timer() as t:
        world = make_world(20, 15, 15)
        _, samples, _, inventory, kge = synth_setup(50, world=world)
        vocab = build_vocab(samples)
        cfg = TrainConfig(lr=2e-3, warmup=20, epochs=300, batch_groups=8,
                          alpha=0.0, n_pos=0, n_neg=0, seed=0)
        groups = build_groups(samples, inventory, RulePhraser(), cfg)
        torch.manual_seed(0)
        model = KGDModel(ModelConfig(vocab_size=len(vocab), kge_dim=kge.triple_dim))
        records = train_loop(groups, model, vocab, kge, cfg)
        assert records[-1]["train_nll"] < 0.1
        exact = sum(
            generate(model, s, vocab, kge) == list(s.response.tokens)
            for s in samples
        )
        assert exact >= 45  # >= 90% greedy regeneration
    assert t.elapsed < 300.0


def test_4_augmentation_distributions():
    with Timer() as t:
        from enco.neggen import sample_edits

        inventory = EntityInventory({
            "A": {f"a{i:05d}" for i in range(5000)},
            "B": {f"b{i:05d}" for i in range(5000)},
        })
        entities = ([(f"a{i:05d}", "A") for i in range(5000)]
                    + [(f"b{i:05d}", "B") for i in range(5000)])
        changed = 0
        kinds = {k: 0 for k in EditKind}
        for seed in range(30):
            log = sample_edits(entities, inventory, stream(seed, "mc"))
            changed += len(log.edits)
            for e in log.edits:
                kinds[e.kind] += 1
        rate = changed / (30 * len(entities))
        assert 0.29 <= rate <= 0.31, rate
        frac = {k: kinds[k] / changed for k in kinds}
        assert 0.08 <= frac[EditKind.DELETE] <= 0.12
        assert 0.77 <= frac[EditKind.RELEVANT_REPLACE] <= 0.83
        assert 0.08 <= frac[EditKind.IRRELEVANT_REPLACE] <= 0.12

        draws = [stream(0, "lam", i).randrange(TRUNCATION_MAX_PERCENT + 1)
                 for i in range(16000)]
        observed = [draws.count(v) for v in range(TRUNCATION_MAX_PERCENT + 1)]
        assert scipy.stats.chisquare(observed).pvalue > 0.01
    assert t.elapsed < 30.0


def test_5_mirroring_consistency():
    world, samples, _, inventory, _ = synth_setup(200, kge_epochs=1)
    violations = 0
    total = 0
    for sample in samples:
        negatives, logs = make_negatives(sample, 5, inventory, seed=0)
        for neg, log in zip(negatives, logs):
            total += 1
            reintroduced = {
                e.replacement[0] for e in log.edits if e.replacement is not None
            }
            for edit in log.edits:
                surface = edit.target[0]
                if surface in reintroduced:
                    continue  # re-inserted by another entity's replacement
                mentions = [
                    s.surface for u in neg.context for s in tag_entities(u, inventory)
                ]
                if surface in mentions:
                    violations += 1
                if any(surface in (t.head, t.tail) for t in neg.knowledge):
                    violations += 1
    assert total == 1000
    assert violations == 0


def test_6_contrastive_loss_units(tiny_model, vocab, kge_params, sample, inventory,
                                  identity_phraser):
    a = torch.tensor([1.0, 0.0], dtype=torch.float64)
    p = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
    n = torch.tensor([[0.5, -0.5]], dtype=torch.float64)
    assert abs(float(contrastive_loss(a, p, n)) - math.log(2.0)) < 1e-9

    p1 = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    n0 = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    assert abs(float(contrastive_loss(a, p1, n0))
               - math.log(1.0 + math.exp(-1.0))) < 1e-9

    group = build_group(sample, inventory, identity_phraser, TrainConfig(n_pos=2, n_neg=3))
    with torch.no_grad():
        base = float(total_loss(tiny_model, group, vocab, kge_params, alpha=0.0))
        shuffled = ContrastiveGroup(group.anchor, group.positives,
                                    list(reversed(group.negatives)))
        assert float(total_loss(tiny_model, shuffled, vocab, kge_params,
                                alpha=0.0)) == base


def test_7_ablation_trend():
    with Timer() as t:
        world = make_world()  # 200-entity KG
        corpus_opts = dict(world=world, n_distractors=2, confusable=True,
                           mention_tail=True)
        train_samples, _ = make_corpus(360, seed=0, **corpus_opts)
        eval_samples, _ = make_corpus(40, seed=1, **corpus_opts)
        triples = world_triples(world, seed=0)
        inventory = EntityInventory.from_triples(triples, world.type_map)
        kge, _ = train_transr(
            triples, TransRConfig(dim_entity=50, dim_relation=50, epochs=50, seed=0))
        vocab = build_vocab(train_samples + eval_samples)
        model_cfg = ModelConfig(vocab_size=len(vocab), kge_dim=kge.triple_dim)
        train_cfg = TrainConfig(lr=1e-3, warmup=20, epochs=40, batch_groups=8,
                                alpha=0.3, n_pos=3, n_neg=3)
        phraser = RulePhraser(SYNONYMS, drop_prob=0.2)
        seeds = [0, 1, 2, 3, 4]
        results = run_ablation(train_samples, eval_samples, vocab, kge, inventory,
                               SYNONYMS, model_cfg, train_cfg, seeds,
                               phraser=phraser)
        failures = []
        for variant in ("no_contrastive", "no_positive_nll"):
            for cond in ("kg_entity_replace", "word_delete"):
                pairs = [(results["full"][s][cond], results[variant][s][cond])
                         for s in seeds]
                wins = sum(full > other for full, other in pairs)
                if wins < 4:
                    failures.append(
                        f"full beat {variant} on {cond} in only {wins}/5 seeds: "
                        + ", ".join(f"{f:.2f} vs {o:.2f}" for f, o in pairs))
        for seed in seeds:
            for variant in ("no_contrastive", "no_positive_nll"):
                gap = abs(results["full"][seed]["clean"]
                          - results[variant][seed]["clean"])
                if gap >= 5.0:
                    failures.append(
                        f"clean gap {gap:.2f} vs {variant} (seed {seed})")
        assert not failures, "; ".join(failures)
    assert t.elapsed < 3600.0


def test_8_transr_separation():
    triples = [KnowledgeTriple(f"p{i}", "directed", f"f{i}") for i in range(10)]
    params, _ = train_transr(
        triples, TransRConfig(dim_entity=16, dim_relation=16, epochs=200, seed=0))
    rng = stream(0, "acceptance-corrupt")
    entities = sorted(params.entity_ids)
    pos, neg = [], []
    for t in triples:
        pos.append(transr_score(t.head, t.relation, t.tail, params))
        if rng.random() < 0.5:
            h = rng.choice([e for e in entities if e != t.head])
            neg.append(transr_score(h, t.relation, t.tail, params))
        else:
            tl = rng.choice([e for e in entities if e != t.tail])
            neg.append(transr_score(t.head, t.relation, tl, params))
    assert sum(pos) / len(pos) < sum(neg) / len(neg) - 0.1


def test_9_cli_determinism(tmp_path, monkeypatch):
    monkeypatch.setenv("ENCO_CACHE_DIR", str(tmp_path / "cache"))
    world = make_world(8, 6, 6)
    samples, _ = make_corpus(4, seed=0, world=world)
    save_corpus(samples, tmp_path / "corpus.jsonl")
    save_kg(world_triples(world, seed=0), tmp_path / "kg.tsv")
    with open(tmp_path / "types.tsv", "w") as f:
        for surface, etype in sorted(world.type_map.items()):
            f.write(f"{surface}\t{etype}\n")
    with open(tmp_path / "syn.tsv", "w") as f:
        for token, alts in sorted(SYNONYMS.items()):
            f.write(token + "\t" + ",".join(alts) + "\n")
    corpus, kg = str(tmp_path / "corpus.jsonl"), str(tmp_path / "kg.tsv")
    types, syn = str(tmp_path / "types.tsv"), str(tmp_path / "syn.tsv")

    def run_twice(args, outputs):
        for tag in ("a", "b"):
            out = tmp_path / tag
            out.mkdir(exist_ok=True)
            resolved = [s.format(out=out) for s in args]
            assert main(resolved) == 0
        for rel in outputs:
            a = (tmp_path / "a" / rel).read_bytes()
            b = (tmp_path / "b" / rel).read_bytes()
            assert a == b, f"{rel} differs between reruns"

    run_twice(["prepare", "--in", corpus, "--kg", kg, "--type-map", types,
               "--out", "{out}/prep"],
              ["prep/corpus.jsonl", "prep/kg.tsv", "prep/inventory.tsv"])
    run_twice(["train-kge", "--kg", kg, "--out", "{out}/kge.enco",
               "--dim-entity", "8", "--dim-relation", "8", "--epochs", "10"],
              ["kge.enco"])
    run_twice(["augment", "--in", corpus, "--kg", kg, "--type-map", types,
               "--synonyms", syn, "--positives", "2", "--negatives", "2",
               "--seed", "1", "--out", "{out}/aug"],
              ["aug/positives.jsonl", "aug/negatives.jsonl", "aug/edit_logs.jsonl"])
    run_twice(["train", "--in", corpus, "--kg", kg,
               "--kge", str(tmp_path / "a" / "kge.enco"),
               "--type-map", types, "--synonyms", syn,
               "--epochs", "1", "--positives", "1", "--negatives", "1",
               "--out", "{out}/run"],
              ["run/model.enco", "run/metrics.jsonl", "run/vocab.txt"])
    model = str(tmp_path / "a" / "run" / "model.enco")
    vocab = str(tmp_path / "a" / "run" / "vocab.txt")
    kge = str(tmp_path / "a" / "kge.enco")
    run_twice(["generate", "--in", corpus, "--checkpoint", model, "--kge", kge,
               "--vocab", vocab, "--strategy", "top-k", "--seed", "3",
               "--out", "{out}/gen.jsonl"],
              ["gen.jsonl"])
    run_twice(["evaluate", "--in", corpus, "--checkpoint", model, "--kge", kge,
               "--vocab", vocab, "--out", "{out}/report.json"],
              ["report.json"])
    run_twice(["perturb", "--in", corpus, "--kind", "word_delete", "--seed", "2",
               "--out", "{out}/noisy.jsonl"],
              ["noisy.jsonl"])
