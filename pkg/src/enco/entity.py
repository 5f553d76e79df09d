"""Entity mention detection and the [Ent]/[\\Ent] boundary-tagging protocol.

Mention detection is a pluggable interface; the shipped implementation is
greedy longest-match dictionary tagging over an inventory built from the
knowledge-graph entity surfaces.
"""

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import ENT_CLOSE, ENT_OPEN, Utterance, detokenize, tokenize

DEFAULT_ETYPE = "ENT"


class EntityError(ValueError):
    """Invalid span or boundary-marker structure."""


@dataclass(frozen=True)
class EntitySpan:
    start: int  # token index, inclusive
    end: int    # token index, exclusive
    surface: str
    etype: str = DEFAULT_ETYPE

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise EntityError(f"invalid span [{self.start}, {self.end})")


class EntityInventory:
    """Mapping etype -> entity surfaces, with a surface -> etype reverse index.

    A surface belongs to exactly one type; unlisted surfaces get
    ``DEFAULT_ETYPE`` when built from triples.
    """

    def __init__(self, by_type: dict):
        self.by_type: dict[str, frozenset[str]] = {}
        self.type_of: dict[str, str] = {}
        for etype, surfaces in by_type.items():
            kept = frozenset(s for s in surfaces)
            for s in kept:
                if not s:
                    raise EntityError("empty entity surface")
                if s in self.type_of:
                    raise EntityError(f"surface {s!r} listed under two types")
                self.type_of[s] = etype
            self.by_type[etype] = kept
        # Tokenized surfaces for longest-match tagging.
        self._by_tokens = {tuple(tokenize(s)): s for s in self.type_of}
        self._max_len = max((len(k) for k in self._by_tokens), default=0)
        # Sorted replacement pools, precomputed so per-edit draws stay O(log n).
        self._sorted_by_type = {t: tuple(sorted(m)) for t, m in self.by_type.items()}
        self._sorted_other = {
            t: tuple(sorted(
                (s, u) for u, members in self.by_type.items() if u != t for s in members
            ))
            for t in self.by_type
        }

    def sorted_surfaces_of_type(self, etype: str) -> tuple:
        return self._sorted_by_type.get(etype, ())

    def sorted_surfaces_of_other_types(self, etype: str) -> tuple:
        """(surface, etype) pairs for every type except ``etype``, sorted."""
        if etype in self._sorted_other:
            return self._sorted_other[etype]
        return tuple(sorted(
            (s, u) for u, members in self.by_type.items() if u != etype for s in members
        ))

    def __len__(self) -> int:
        return len(self.type_of)

    def surfaces(self):
        return self.type_of.keys()

    def surfaces_of_type(self, etype: str) -> frozenset:
        return self.by_type.get(etype, frozenset())

    @classmethod
    def from_triples(cls, triples, type_map: dict | None = None) -> "EntityInventory":
        type_map = type_map or {}
        by_type: dict[str, set] = {}
        for t in triples:
            for surface in (t.head, t.tail):
                etype = type_map.get(surface, DEFAULT_ETYPE)
                by_type.setdefault(etype, set()).add(surface)
        return cls(by_type)

    @classmethod
    def load_type_map(cls, path) -> dict:
        """Read a ``surface\\tetype`` TSV into a plain dict."""
        type_map = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise EntityError(f"{path}:{lineno}: expected 'surface\\tetype'")
            type_map[parts[0]] = parts[1]
        return type_map


def tag_entities(utterance: Utterance, inventory: EntityInventory) -> list[EntitySpan]:
    """Greedy longest-match left-to-right dictionary tagging."""
    tokens = utterance.tokens
    spans = []
    i = 0
    while i < len(tokens):
        matched = None
        top = min(inventory._max_len, len(tokens) - i)
        for width in range(top, 0, -1):
            surface = inventory._by_tokens.get(tuple(tokens[i:i + width]))
            if surface is not None:
                matched = EntitySpan(i, i + width, surface, inventory.type_of[surface])
                break
        if matched:
            spans.append(matched)
            i = matched.end
        else:
            i += 1
    return spans


def insert_boundaries(tokens, spans) -> list[str]:
    """Wrap each span in [Ent] ... [\\Ent] markers."""
    spans = sorted(spans, key=lambda s: s.start)
    for prev, cur in zip(spans, spans[1:]):
        if cur.start < prev.end:
            raise EntityError(f"overlapping spans {prev} and {cur}")
    if spans and spans[-1].end > len(tokens):
        raise EntityError("span extends past end of utterance")
    out = []
    pos = 0
    for span in spans:
        out.extend(tokens[pos:span.start])
        out.append(ENT_OPEN)
        out.extend(tokens[span.start:span.end])
        out.append(ENT_CLOSE)
        pos = span.end
    out.extend(tokens[pos:])
    return out


def strip_boundaries(tagged) -> tuple[list[str], list[EntitySpan]]:
    """Inverse of :func:`insert_boundaries`; rejects unbalanced or nested markers."""
    tokens: list[str] = []
    spans: list[EntitySpan] = []
    open_at = None
    for tok in tagged:
        if tok == ENT_OPEN:
            if open_at is not None:
                raise EntityError("nested [Ent] marker")
            open_at = len(tokens)
        elif tok == ENT_CLOSE:
            if open_at is None:
                raise EntityError("unmatched [\\Ent] marker")
            if open_at == len(tokens):
                raise EntityError("empty [Ent] span")
            spans.append(EntitySpan(open_at, len(tokens), detokenize(tokens[open_at:])))
            open_at = None
        else:
            tokens.append(tok)
    if open_at is not None:
        raise EntityError("unclosed [Ent] marker")
    return tokens, spans


def entity_multiset(context, inventory: EntityInventory) -> Counter:
    """Multiset of (surface, etype) mentions across a list of utterances."""
    counts: Counter = Counter()
    for utt in context:
        for span in tag_entities(utt, inventory):
            counts[(span.surface, span.etype)] += 1
    return counts
