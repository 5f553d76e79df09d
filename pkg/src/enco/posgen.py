"""Positive-sample construction: entity-preserving paraphrasing of each
context utterance plus random knowledge truncation.

The paraphraser is an interface; the shipped :class:`RulePhraser` is a
rule-based stand-in (synonym substitution + local reorder rules) that
honours the same contract a trained seq2seq paraphraser would: tokens
inside [Ent]...[\\Ent] spans are never rewritten.
"""

import logging
import random
from pathlib import Path
from typing import Protocol

from .corpus import KGDSample, Utterance, RESERVED_TOKENS
from .entity import (
    ENT_CLOSE,
    ENT_OPEN,
    EntityInventory,
    entity_multiset,
    insert_boundaries,
    strip_boundaries,
    tag_entities,
)
from .rng import stream

log = logging.getLogger(__name__)

TRUNCATION_MAX_PERCENT = 15  # removal percentage drawn uniformly from 0..15
PARAPHRASE_RETRIES = 3


class ParaphraserInterface(Protocol):
    def paraphrase(self, tagged_tokens: list[str], rng: random.Random, k: int) -> list[str]:
        """Rewrite a boundary-tagged token list, keeping entity spans intact."""
        ...


class RulePhraser:
    """Synonym substitution and pattern reordering outside entity spans.

    ``synonyms`` maps a token to its alternatives; a token is rewritten
    with probability ``sub_prob``, drawing uniformly from its first ``k``
    alternatives. ``reorder_rules`` is a list of (pattern, permutation)
    pairs applied wherever the token pattern matches outside a span.
    ``drop_prob`` elides non-entity tokens (abbreviation-style
    paraphrasing); entity spans are never dropped. With an empty table,
    no rules, and ``drop_prob`` 0 this is the identity.
    """

    def __init__(self, synonyms: dict | None = None, reorder_rules=None,
                 sub_prob: float = 0.5, drop_prob: float = 0.0):
        self.synonyms = {t: list(alts) for t, alts in (synonyms or {}).items()}
        self.reorder_rules = [(tuple(p), tuple(perm)) for p, perm in (reorder_rules or [])]
        self.sub_prob = sub_prob
        if not 0.0 <= drop_prob < 1.0:
            raise ValueError("drop_prob must lie in [0, 1)")
        self.drop_prob = drop_prob

    def paraphrase(self, tagged_tokens, rng, k: int = 5):
        if k < 1:
            raise ValueError("top-k width must be >= 1")
        protected = _protected_positions(tagged_tokens)
        out = list(tagged_tokens)
        for i, tok in enumerate(out):
            if protected[i] or tok in RESERVED_TOKENS:
                continue
            alts = self.synonyms.get(tok)
            if alts and rng.random() < self.sub_prob:
                out[i] = alts[rng.randrange(min(k, len(alts)))]
        if self.drop_prob:
            kept = [
                tok for i, tok in enumerate(out)
                if protected[i] or tok in RESERVED_TOKENS
                or not rng.random() < self.drop_prob
            ]
            out = kept
        for pattern, perm in self.reorder_rules:
            out = _apply_reorder(out, pattern, perm, _protected_positions(out))
        return out

    @classmethod
    def load_synonyms(cls, path) -> dict:
        """Read a ``token\\talt1,alt2,...`` TSV synonym table."""
        table = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'token\\talt1,alt2,...'")
            table[parts[0]] = [a for a in parts[1].split(",") if a]
        return table


def _protected_positions(tokens) -> list[bool]:
    """True at every position lying strictly inside an entity span."""
    protected = []
    inside = False
    for tok in tokens:
        if tok == ENT_OPEN:
            inside = True
            protected.append(True)
        elif tok == ENT_CLOSE:
            inside = False
            protected.append(True)
        else:
            protected.append(inside)
    return protected


def _apply_reorder(tokens, pattern, perm, protected):
    out = []
    i = 0
    n = len(pattern)
    while i < len(tokens):
        window = tuple(tokens[i:i + n])
        if n and window == pattern and not any(protected[i:i + n]):
            out.extend(window[j] for j in perm)
            i += n
        else:
            out.append(tokens[i])
            i += 1
    return out


def filter_parallel_pairs(pairs, inventory: EntityInventory):
    """Keep only (source, target) utterance pairs whose entity multisets match."""
    return [
        (src, tgt)
        for src, tgt in pairs
        if entity_multiset([src], inventory) == entity_multiset([tgt], inventory)
    ]


def paraphrase_utterance(utt: Utterance, inventory: EntityInventory,
                         phraser: ParaphraserInterface, rng: random.Random,
                         k: int = 5) -> Utterance:
    """Tag entities, paraphrase with boundary protection, strip markers.

    A phraser output that breaks the entity contract is rejected and
    retried; after ``PARAPHRASE_RETRIES`` failures the original
    utterance is returned unchanged.
    """
    if k < 1:
        raise ValueError("top-k width must be >= 1")
    spans = tag_entities(utt, inventory)
    tagged = insert_boundaries(list(utt.tokens), spans)
    want = entity_multiset([utt], inventory)
    for _ in range(PARAPHRASE_RETRIES):
        candidate = phraser.paraphrase(tagged, rng, k)
        try:
            tokens, _ = strip_boundaries(candidate)
        except Exception:
            continue
        result = Utterance.from_tokens(utt.speaker, tokens)
        if tokens and entity_multiset([result], inventory) == want:
            return result
    log.warning("paraphraser violated the entity contract %d times; keeping original",
                PARAPHRASE_RETRIES)
    return utt


def truncate_knowledge(knowledge, rng: random.Random):
    """Drop floor(lambda/100 * |K|) uniformly chosen triples, with lambda
    drawn uniformly from 0..TRUNCATION_MAX_PERCENT."""
    knowledge = tuple(knowledge)
    lam = rng.randrange(TRUNCATION_MAX_PERCENT + 1)
    n_remove = (lam * len(knowledge)) // 100
    if n_remove == 0:
        return knowledge
    removed = set(rng.sample(range(len(knowledge)), n_remove))
    return tuple(t for i, t in enumerate(knowledge) if i not in removed)


def make_positives(sample: KGDSample, n: int, inventory: EntityInventory,
                   phraser: ParaphraserInterface, seed: int, k: int = 5) -> list[KGDSample]:
    """Build ``n`` positives: per-utterance paraphrases plus an independent
    knowledge-truncation draw each; the response is carried unchanged."""
    if n < 1:
        raise ValueError("n must be >= 1")
    positives = []
    for i in range(n):
        rng = stream(seed, sample.sample_id, "pos", i)
        context = tuple(
            paraphrase_utterance(u, inventory, phraser, rng, k) for u in sample.context
        )
        knowledge = truncate_knowledge(sample.knowledge, rng)
        positives.append(
            KGDSample(
                sample_id=f"{sample.sample_id}#pos{i}",
                context=context,
                knowledge=knowledge,
                response=sample.response,
            )
        )
    return positives
