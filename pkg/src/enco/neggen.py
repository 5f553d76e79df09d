"""Negative-sample construction: per-entity stochastic edits in the
context with the same edits mirrored into the knowledge set.

Each distinct context entity is independently selected for change with
probability 0.3; a selected entity is deleted (replaced by [DEL]),
replaced by a same-type entity, or replaced by a different-type entity
with probabilities 0.1 / 0.8 / 0.1. Edits apply to every mention and to
every matching head/tail slot so the perturbed context and knowledge
stay mutually consistent.
"""

import bisect
import json
import logging
import random
from dataclasses import dataclass
from enum import Enum

from .corpus import DEL, KGDSample, KnowledgeTriple, Utterance, tokenize
from .entity import EntityInventory, entity_multiset, tag_entities
from .rng import stream

log = logging.getLogger(__name__)

P_CHANGE = 0.3
KIND_WEIGHTS = (0.1, 0.8, 0.1)  # delete / relevant / irrelevant
MAX_REDRAWS = 5


class EditKind(Enum):
    DELETE = "delete"
    RELEVANT_REPLACE = "relevant_replace"
    IRRELEVANT_REPLACE = "irrelevant_replace"


@dataclass(frozen=True)
class EntityEdit:
    target: tuple[str, str]  # (surface, etype)
    kind: EditKind
    replacement: tuple[str, str] | None = None

    def __post_init__(self):
        if self.kind is EditKind.DELETE:
            if self.replacement is not None:
                raise ValueError("DELETE edit carries no replacement")
        elif self.replacement is None:
            raise ValueError(f"{self.kind.name} edit needs a replacement")
        elif self.kind is EditKind.RELEVANT_REPLACE:
            if self.replacement[1] != self.target[1] or self.replacement[0] == self.target[0]:
                raise ValueError("RELEVANT_REPLACE needs a distinct same-type entity")
        elif self.kind is EditKind.IRRELEVANT_REPLACE:
            if self.replacement[1] == self.target[1]:
                raise ValueError("IRRELEVANT_REPLACE needs a different-type entity")


@dataclass(frozen=True)
class EditLog:
    sample_id: str
    edits: tuple[EntityEdit, ...]

    def __post_init__(self):
        targets = [e.target for e in self.edits]
        if len(targets) != len(set(targets)):
            raise ValueError("at most one edit per distinct entity")

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "edits": [
                {
                    "target": list(e.target),
                    "kind": e.kind.value,
                    "replacement": list(e.replacement) if e.replacement else None,
                }
                for e in self.edits
            ],
        }

    @classmethod
    def from_record(cls, record: dict) -> "EditLog":
        return cls(
            sample_id=record["sample_id"],
            edits=tuple(
                EntityEdit(
                    target=tuple(e["target"]),
                    kind=EditKind(e["kind"]),
                    replacement=tuple(e["replacement"]) if e["replacement"] else None,
                )
                for e in record["edits"]
            ),
        )


def save_edit_logs(logs, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for entry in logs:
            f.write(json.dumps(entry.to_record(), ensure_ascii=False) + "\n")


def load_edit_logs(path) -> list[EditLog]:
    with open(path, encoding="utf-8") as f:
        return [EditLog.from_record(json.loads(line)) for line in f if line.strip()]


def _draw_kind(rng: random.Random, weights=KIND_WEIGHTS) -> EditKind:
    roll = rng.random()
    if roll < weights[0]:
        return EditKind.DELETE
    if roll < weights[0] + weights[1]:
        return EditKind.RELEVANT_REPLACE
    return EditKind.IRRELEVANT_REPLACE


def _make_edit(target: tuple[str, str], kind: EditKind, inventory: EntityInventory,
               rng: random.Random) -> EntityEdit:
    """Build one edit, downgrading the kind when the inventory cannot
    supply the requested replacement pool."""
    surface, etype = target
    if kind is EditKind.RELEVANT_REPLACE:
        pool = inventory.sorted_surfaces_of_type(etype)
        n_alternatives = len(pool) - (1 if surface in inventory.surfaces_of_type(etype) else 0)
        if n_alternatives < 1:
            log.debug("no same-type replacement for %r; downgrading to irrelevant", surface)
            kind = EditKind.IRRELEVANT_REPLACE
        else:
            idx = rng.randrange(n_alternatives)
            cut = bisect.bisect_left(pool, surface)
            if idx >= cut and cut < len(pool) and pool[cut] == surface:
                idx += 1
            return EntityEdit(target, kind, (pool[idx], etype))
    if kind is EditKind.IRRELEVANT_REPLACE:
        pool = inventory.sorted_surfaces_of_other_types(etype)
        if not pool:
            log.debug("single-type inventory; downgrading %r to deletion", surface)
            kind = EditKind.DELETE
        else:
            return EntityEdit(target, kind, rng.choice(pool))
    return EntityEdit(target, EditKind.DELETE)


def sample_edits(entities, inventory: EntityInventory, rng: random.Random,
                 p_change: float = P_CHANGE, weights=KIND_WEIGHTS,
                 sample_id: str = "") -> EditLog:
    """Independently select each distinct entity with ``p_change`` and
    assign a change kind by ``weights``."""
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError("kind weights must sum to 1")
    edits = []
    for target in sorted(set(entities)):
        if rng.random() < p_change:
            edits.append(_make_edit(target, _draw_kind(rng, weights), inventory, rng))
    return EditLog(sample_id=sample_id, edits=tuple(edits))


def apply_edits_context(context, log_: EditLog, inventory: EntityInventory):
    """Rewrite every mention of each edited entity in every utterance."""
    by_target = {e.target: e for e in log_.edits}
    out = []
    for utt in context:
        spans = tag_entities(utt, inventory)
        tokens: list[str] = []
        pos = 0
        for span in spans:
            tokens.extend(utt.tokens[pos:span.start])
            edit = by_target.get((span.surface, span.etype))
            if edit is None:
                tokens.extend(utt.tokens[span.start:span.end])
            elif edit.kind is EditKind.DELETE:
                tokens.append(DEL)
            else:
                tokens.extend(tokenize(edit.replacement[0]))
            pos = span.end
        tokens.extend(utt.tokens[pos:])
        out.append(Utterance.from_tokens(utt.speaker, tokens))
    return tuple(out)


def apply_edits_knowledge(knowledge, log_: EditLog):
    """Rewrite head/tail slots equal to an edited surface; relations and
    the triple count are untouched."""
    by_surface = {e.target[0]: e for e in log_.edits}

    def rewrite(slot: str) -> str:
        edit = by_surface.get(slot)
        if edit is None:
            return slot
        return DEL if edit.kind is EditKind.DELETE else edit.replacement[0]

    return tuple(
        KnowledgeTriple(rewrite(t.head), t.relation, rewrite(t.tail)) for t in knowledge
    )


def _forced_token_fallback(sample: KGDSample, rng: random.Random):
    """No entities to edit: replace one random context token with [DEL]
    so the negative always differs from its anchor."""
    lengths = [len(u.tokens) for u in sample.context]
    total = sum(lengths)
    if total == 0:
        # degenerate all-empty context; append a [DEL] token to the last utterance
        context = list(sample.context)
        context[-1] = Utterance.from_tokens(context[-1].speaker, (DEL,))
        return tuple(context)
    flat = rng.randrange(total)
    context = []
    for utt in sample.context:
        if 0 <= flat < len(utt.tokens):
            tokens = list(utt.tokens)
            tokens[flat] = DEL
            context.append(Utterance.from_tokens(utt.speaker, tokens))
        else:
            context.append(utt)
        flat -= len(utt.tokens)
    return tuple(context)


def make_negatives(sample: KGDSample, n: int, inventory: EntityInventory,
                   seed: int, p_change: float = P_CHANGE,
                   weights=KIND_WEIGHTS) -> tuple[list[KGDSample], list[EditLog]]:
    """Build ``n`` negatives, each from an independent edit draw; an empty
    draw is retried and finally forced so no negative equals its anchor."""
    if n < 1:
        raise ValueError("n must be >= 1")
    entities = sorted(entity_multiset(sample.context, inventory))
    negatives, logs = [], []
    for i in range(n):
        rng = stream(seed, sample.sample_id, "neg", i)
        neg_id = f"{sample.sample_id}#neg{i}"
        if not entities:
            log.warning("%s: context has no entities; forcing a token-level edit", sample.sample_id)
            context = _forced_token_fallback(sample, rng)
            edit_log = EditLog(sample_id=neg_id, edits=())
            negatives.append(
                KGDSample(neg_id, context, sample.knowledge, sample.response)
            )
            logs.append(edit_log)
            continue
        edit_log = sample_edits(entities, inventory, rng, p_change, weights, sample_id=neg_id)
        for _ in range(MAX_REDRAWS):
            if edit_log.edits:
                break
            edit_log = sample_edits(entities, inventory, rng, p_change, weights,
                                    sample_id=neg_id)
        if not edit_log.edits:
            target = entities[rng.randrange(len(entities))]
            edit_log = EditLog(
                sample_id=neg_id,
                edits=(_make_edit(target, _draw_kind(rng, weights), inventory, rng),),
            )
        negatives.append(
            KGDSample(
                sample_id=neg_id,
                context=apply_edits_context(sample.context, edit_log, inventory),
                knowledge=apply_edits_knowledge(sample.knowledge, edit_log),
                response=sample.response,
            )
        )
        logs.append(edit_log)
    return negatives, logs
