"""Seeded noise generators for robustness testing and the trivial
few-shot augmentation baselines (word deletion / word reordering).

All kinds leave the response untouched; context kinds leave the
knowledge set untouched and vice versa. Randomness is keyed by
(seed, sample id, kind) so perturbed corpora are reproducible and
independent of iteration order.
"""

import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .corpus import DEL, KGDSample, Utterance, Vocabulary, save_corpus
from .entity import EntityInventory
from .neggen import EditKind, EditLog, EntityEdit, apply_edits_knowledge
from .posgen import ParaphraserInterface, paraphrase_utterance
from .rng import stream


class Perturbation(Enum):
    WORD_DELETE = "word_delete"
    WORD_REPLACE = "word_replace"
    SYNONYM_REPLACE = "synonym_replace"
    UTTERANCE_DELETE = "utterance_delete"
    PARAPHRASE = "paraphrase"
    KG_ENTITY_DELETE = "kg_entity_delete"
    KG_ENTITY_REPLACE = "kg_entity_replace"
    FEWSHOT_WORD_DELETE = "fewshot_word_delete"
    FEWSHOT_WORD_REORDER = "fewshot_word_reorder"


ROBUSTNESS_KINDS = (
    Perturbation.WORD_DELETE,
    Perturbation.WORD_REPLACE,
    Perturbation.SYNONYM_REPLACE,
    Perturbation.UTTERANCE_DELETE,
    Perturbation.PARAPHRASE,
    Perturbation.KG_ENTITY_DELETE,
    Perturbation.KG_ENTITY_REPLACE,
)

DEFAULT_RATES = {kind: 0.3 for kind in Perturbation}
DEFAULT_RATES[Perturbation.FEWSHOT_WORD_DELETE] = 0.7


@dataclass(frozen=True)
class PerturbationSpec:
    kind: Perturbation
    rate: float | None = None  # None = the kind's default
    seed: int = 0

    def __post_init__(self):
        if self.rate is not None and not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")

    @property
    def effective_rate(self) -> float:
        return DEFAULT_RATES[self.kind] if self.rate is None else self.rate


def _map_context(sample, fn):
    return tuple(fn(i, u) for i, u in enumerate(sample.context))


def perturb(sample: KGDSample, spec: PerturbationSpec,
            vocab: Vocabulary | None = None,
            synonyms: dict | None = None,
            inventory: EntityInventory | None = None,
            phraser: ParaphraserInterface | None = None) -> KGDSample:
    """One perturbed copy of ``sample``; the response is never touched."""
    kind, rate = spec.kind, spec.effective_rate
    rng = stream(spec.seed, sample.sample_id, kind.value)
    context, knowledge = sample.context, sample.knowledge

    if kind is Perturbation.WORD_DELETE:
        context = _map_context(sample, lambda i, u: Utterance.from_tokens(
            u.speaker, [t for t in u.tokens if not rng.random() < rate]))
    elif kind is Perturbation.WORD_REPLACE:
        if vocab is None:
            raise ValueError("WORD_REPLACE needs a vocabulary")
        pool = vocab.non_reserved()
        if not pool:
            raise ValueError("vocabulary has no non-reserved tokens")
        context = _map_context(sample, lambda i, u: Utterance.from_tokens(
            u.speaker,
            [rng.choice(pool) if rng.random() < rate else t for t in u.tokens]))
    elif kind is Perturbation.SYNONYM_REPLACE:
        if synonyms is None:
            raise ValueError("SYNONYM_REPLACE needs a synonym table")
        context = _map_context(sample, lambda i, u: Utterance.from_tokens(
            u.speaker,
            [rng.choice(synonyms[t]) if t in synonyms and synonyms[t] and rng.random() < rate
             else t for t in u.tokens]))
    elif kind is Perturbation.UTTERANCE_DELETE:
        kept = [u for u in sample.context[:-1] if not rng.random() < rate]
        kept.append(sample.context[-1])  # final utterance always survives
        context = tuple(kept)
    elif kind is Perturbation.PARAPHRASE:
        if inventory is None or phraser is None:
            raise ValueError("PARAPHRASE needs an inventory and a paraphraser")
        context = tuple(
            paraphrase_utterance(u, inventory, phraser, rng) for u in sample.context
        )
    elif kind in (Perturbation.KG_ENTITY_DELETE, Perturbation.KG_ENTITY_REPLACE):
        knowledge = _perturb_knowledge(sample, kind, rate, inventory, rng)
    elif kind in (Perturbation.FEWSHOT_WORD_DELETE, Perturbation.FEWSHOT_WORD_REORDER):
        return fewshot_augment(sample, kind, rate, rng)
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown perturbation kind {kind}")

    return KGDSample(sample.sample_id, context, knowledge, sample.response)


def _perturb_knowledge(sample, kind, rate, inventory, rng):
    """Delete ([DEL]-mark) or replace each distinct KG entity with
    probability ``rate``; the context is untouched."""
    entities = sorted({s for t in sample.knowledge for s in (t.head, t.tail)})
    edits = []
    for surface in entities:
        if not rng.random() < rate:
            continue
        if kind is Perturbation.KG_ENTITY_DELETE:
            edits.append(EntityEdit((surface, "ENT"), EditKind.DELETE))
        else:
            if inventory is None:
                raise ValueError("KG_ENTITY_REPLACE needs an inventory")
            pool = sorted(set(inventory.surfaces()) - {surface})
            if not pool:
                continue
            replacement = rng.choice(pool)
            etype = inventory.type_of.get(surface, "ENT")
            rep_type = inventory.type_of.get(replacement, "ENT")
            kind_ = (EditKind.RELEVANT_REPLACE if rep_type == etype
                     else EditKind.IRRELEVANT_REPLACE)
            edits.append(EntityEdit((surface, etype), kind_, (replacement, rep_type)))
    log = EditLog(sample_id=sample.sample_id, edits=tuple(edits))
    return apply_edits_knowledge(sample.knowledge, log)


def fewshot_augment(sample: KGDSample, kind: Perturbation, rate: float,
                    rng: random.Random) -> KGDSample:
    """Word deletion replaces selected tokens with [DEL] (not removal);
    reordering swaps disjoint token pairs covering about ``rate`` of tokens."""
    if kind is Perturbation.FEWSHOT_WORD_DELETE:
        context = _map_context(sample, lambda i, u: Utterance.from_tokens(
            u.speaker, [DEL if rng.random() < rate else t for t in u.tokens]))
    elif kind is Perturbation.FEWSHOT_WORD_REORDER:
        def reorder(i, u):
            tokens = list(u.tokens)
            n_pairs = int(round(rate * len(tokens) / 2))
            n_pairs = min(n_pairs, len(tokens) // 2)
            if n_pairs:
                indices = rng.sample(range(len(tokens)), 2 * n_pairs)
                for a, b in zip(indices[::2], indices[1::2]):
                    tokens[a], tokens[b] = tokens[b], tokens[a]
            return Utterance.from_tokens(u.speaker, tokens)
        context = _map_context(sample, reorder)
    else:
        raise ValueError(f"{kind} is not a few-shot augmentation kind")
    return KGDSample(sample.sample_id, context, sample.knowledge, sample.response)


def build_noisy_suite(samples, seeds, out_dir, kinds=ROBUSTNESS_KINDS,
                      rates: dict | None = None, **resources) -> dict:
    """One perturbed corpus file per kind per seed, plus the vanilla
    control; returns {(kind, seed) or "vanilla": path}."""
    if not samples:
        raise ValueError("empty corpus")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rates = rates or {}
    written = {}
    vanilla = out_dir / "vanilla.jsonl"
    save_corpus(samples, vanilla)
    written["vanilla"] = vanilla
    for kind in kinds:
        for seed in seeds:
            spec = PerturbationSpec(kind, rates.get(kind), seed)
            perturbed = [perturb(s, spec, **resources) for s in samples]
            path = out_dir / f"{kind.value}_seed{seed}.jsonl"
            save_corpus(perturbed, path)
            written[(kind, seed)] = path
    return written
