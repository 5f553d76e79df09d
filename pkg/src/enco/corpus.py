"""Data model, tokenization, vocabulary and file I/O for dialogue corpora.

Corpus files are JSON-lines (one sample per line); knowledge-graph
inventories are headerless TSV (``head\\trelation\\ttail``).
"""

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

PAD, BOS, EOS, SEP = "[PAD]", "[BOS]", "[EOS]", "[SEP]"
ENT_OPEN, ENT_CLOSE = "[Ent]", "[\\Ent]"
DEL, UNK = "[DEL]", "[UNK]"

# Reserved ids are fixed: 0..6 in this order, then [UNK].
RESERVED_TOKENS = (PAD, BOS, EOS, SEP, ENT_OPEN, ENT_CLOSE, DEL, UNK)

PAD_ID, BOS_ID, EOS_ID, SEP_ID, ENT_OPEN_ID, ENT_CLOSE_ID, DEL_ID, UNK_ID = range(8)

# Default sequence budgets; longer contexts drop oldest utterances first.
MAX_CONTEXT_TOKENS = 256
MAX_RESPONSE_TOKENS = 64

_CJK = "㐀-䶿一-鿿豈-﫿"
_TOKEN_RE = re.compile(
    "|".join(re.escape(t) for t in RESERVED_TOKENS)
    + f"|[{_CJK}]"
    + rf"|(?:(?![{_CJK}])[\w])+"
    + r"|[^\w\s]"
)
_CJK_RE = re.compile(f"^[{_CJK}]$")
_TRAILING_PUNCT_RE = re.compile(r"^[^\w\s]$")


class CorpusError(ValueError):
    """Malformed corpus or knowledge file."""


def tokenize(text: str) -> list[str]:
    """Split on whitespace, then peel punctuation, CJK characters and
    reserved special tokens off into single tokens."""
    return _TOKEN_RE.findall(text)


def detokenize(tokens) -> str:
    """Inverse of :func:`tokenize` up to whitespace normalization.

    No space is inserted between adjacent CJK characters or before a
    punctuation token, so CJK surfaces round-trip verbatim.
    """
    out = []
    for i, tok in enumerate(tokens):
        if i > 0:
            prev = tokens[i - 1]
            glue = (_CJK_RE.match(prev) and _CJK_RE.match(tok)) or _TRAILING_PUNCT_RE.match(tok)
            if not glue:
                out.append(" ")
        out.append(tok)
    return "".join(out)


@dataclass(frozen=True)
class Utterance:
    speaker: str  # "A" or "B"
    text: str
    tokens: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.speaker not in ("A", "B"):
            raise CorpusError(f"speaker must be 'A' or 'B', got {self.speaker!r}")

    @classmethod
    def make(cls, speaker: str, text: str) -> "Utterance":
        return cls(speaker, text, tuple(tokenize(text)))

    @classmethod
    def from_tokens(cls, speaker: str, tokens) -> "Utterance":
        tokens = tuple(tokens)
        return cls(speaker, detokenize(tokens), tokens)


@dataclass(frozen=True)
class KnowledgeTriple:
    head: str
    relation: str
    tail: str

    def __post_init__(self):
        for name, value in (("head", self.head), ("relation", self.relation), ("tail", self.tail)):
            if not value:
                raise CorpusError(f"knowledge triple has empty {name}")


@dataclass(frozen=True)
class KGDSample:
    sample_id: str
    context: tuple[Utterance, ...]
    knowledge: tuple[KnowledgeTriple, ...]
    response: Utterance

    def __post_init__(self):
        if len(self.context) < 1:
            raise CorpusError(f"{self.sample_id}: context must contain at least one utterance")
        if self.response.speaker == self.context[-1].speaker:
            raise CorpusError(
                f"{self.sample_id}: response speaker must differ from last context speaker"
            )

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "context": [{"speaker": u.speaker, "text": u.text} for u in self.context],
            "knowledge": [[t.head, t.relation, t.tail] for t in self.knowledge],
            "response": {"speaker": self.response.speaker, "text": self.response.text},
        }

    @classmethod
    def from_record(cls, record: dict) -> "KGDSample":
        missing = {"sample_id", "context", "knowledge", "response"} - set(record)
        if missing:
            raise CorpusError(f"missing fields: {sorted(missing)}")
        return cls(
            sample_id=record["sample_id"],
            context=tuple(Utterance.make(u["speaker"], u["text"]) for u in record["context"]),
            knowledge=tuple(KnowledgeTriple(h, r, t) for h, r, t in record["knowledge"]),
            response=Utterance.make(record["response"]["speaker"], record["response"]["text"]),
        )


class Vocabulary:
    """Token/id mapping with fixed reserved ids and an [UNK] fallback."""

    def __init__(self, tokens):
        self.id_to_token: list[str] = list(RESERVED_TOKENS)
        for tok in tokens:
            if tok not in RESERVED_TOKENS:
                self.id_to_token.append(tok)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def non_reserved(self) -> list[str]:
        return self.id_to_token[len(RESERVED_TOKENS):]

    def save(self, path) -> None:
        Path(path).write_text(
            "\n".join(self.id_to_token) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise CorpusError(f"{path}: reserved token block is corrupt")
        return cls(lines[len(RESERVED_TOKENS):])


def build_vocab(samples, min_freq: int = 1) -> Vocabulary:
    """Vocabulary of all tokens with corpus frequency >= ``min_freq``,
    ordered by (frequency desc, token lexicographic)."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    freqs = Counter()
    for sample in samples:
        for utt in (*sample.context, sample.response):
            freqs.update(utt.tokens)
    kept = [t for t, c in freqs.items() if c >= min_freq and t not in RESERVED_TOKENS]
    kept.sort(key=lambda t: (-freqs[t], t))
    return Vocabulary(kept)


def load_corpus(path) -> list[KGDSample]:
    samples = []
    seen_ids = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                sample = KGDSample.from_record(json.loads(line))
            except (json.JSONDecodeError, CorpusError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            if sample.sample_id in seen_ids:
                raise CorpusError(f"{path}:{lineno}: duplicate sample_id {sample.sample_id!r}")
            seen_ids.add(sample.sample_id)
            samples.append(sample)
    return samples


def save_corpus(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(json.dumps(sample.to_record(), ensure_ascii=False) + "\n")


def load_kg(path) -> list[KnowledgeTriple]:
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 3 tab-separated fields")
            triples.append(KnowledgeTriple(*parts))
    return triples


def save_kg(triples, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in triples:
            f.write(f"{t.head}\t{t.relation}\t{t.tail}\n")


def context_token_ids(sample: KGDSample, vocab: Vocabulary,
                      max_tokens: int = MAX_CONTEXT_TOKENS) -> list[int]:
    """Linearize the context for the encoder: utterances joined with [SEP],
    oldest utterances dropped first when over budget."""
    utts = list(sample.context)
    def length(us):
        return sum(len(u.tokens) for u in us) + max(len(us) - 1, 0)
    while len(utts) > 1 and length(utts) > max_tokens:
        utts.pop(0)
    tokens: list[str] = []
    for i, u in enumerate(utts):
        if i:
            tokens.append(SEP)
        tokens.extend(u.tokens)
    if len(tokens) > max_tokens:
        tokens = tokens[-max_tokens:]
    if not tokens:
        tokens = [SEP]  # encoder needs at least one position
    return vocab.encode(tokens)


def response_token_ids(sample: KGDSample, vocab: Vocabulary,
                       max_tokens: int = MAX_RESPONSE_TOKENS) -> list[int]:
    """Gold response ids, truncated, without [BOS]/[EOS] framing."""
    return vocab.encode(sample.response.tokens[:max_tokens])
