"""Evaluation metrics: perplexity, corpus-level BLEU-1..4 and DISTINCT-1..4.

BLEU is corpus-level with uniform weights over orders 1..n, clipped
n-gram precision and the standard brevity penalty. A zero-match order is
floored at 1 / (2 * hypothesis n-gram count) so the geometric mean stays
defined (add-epsilon smoothing). Scores are word-level over this
package's tokenizer output, on a 0..100 scale. DISTINCT pools n-gram
counts over the whole corpus.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass

import torch

from .corpus import KGDSample, Vocabulary
from .kge import TransRParams
from .model import GenerationStrategy, KGDModel, generate
from .train import encode_sample, _batch_forward_nll


@dataclass
class EvalReport:
    ppl: float
    bleu: tuple  # BLEU-1..4, percent
    distinct: tuple  # DISTINCT-1..4, percent
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "ppl": self.ppl,
            "bleu": list(self.bleu),
            "distinct": list(self.distinct),
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["ppl"], tuple(d["bleu"]), tuple(d["distinct"]), d["sample_count"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(hypotheses, references, n: int) -> float:
    """Corpus BLEU with uniform weights over orders 1..n, in percent."""
    if not 1 <= n <= 4:
        raise ValueError("BLEU order must be in 1..4")
    if not hypotheses or len(hypotheses) != len(references):
        raise ValueError("need equal-length, non-empty hypothesis/reference lists")
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0
    log_precision = 0.0
    for order in range(1, n + 1):
        matches = total = 0
        for hyp, ref in zip(hypotheses, references):
            hyp_counts = _ngrams(hyp, order)
            ref_counts = _ngrams(ref, order)
            matches += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            total += sum(hyp_counts.values())
        if total == 0:
            precision = 0.5  # no n-grams of this order at all; floor with count 1
        elif matches == 0:
            precision = 1.0 / (2 * total)
        else:
            precision = matches / total
        log_precision += math.log(precision) / n
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_precision)


def distinct_n(hypotheses, n: int) -> float:
    """100 * unique n-grams / total n-grams, pooled over the corpus."""
    if n < 1:
        raise ValueError("n must be >= 1")
    unique = set()
    total = 0
    for hyp in hypotheses:
        for i in range(len(hyp) - n + 1):
            unique.add(tuple(hyp[i:i + n]))
            total += 1
    if total == 0:
        return 0.0
    return 100.0 * len(unique) / total


@torch.no_grad()
def perplexity(samples, model: KGDModel, vocab: Vocabulary,
               kge_params: TransRParams) -> float:
    """exp(total gold-response NLL / total token count)."""
    if not samples:
        raise ValueError("need at least one sample")
    total_nll = total_tokens = 0.0
    for sample in samples:
        encoded = encode_sample(sample, vocab, kge_params, model.cfg)
        nll, counts = _batch_forward_nll(model, [encoded])
        total_nll += float(nll.sum())
        total_tokens += float(counts.sum())
    return math.exp(total_nll / total_tokens)


def evaluate(model: KGDModel, samples, vocab: Vocabulary, kge_params: TransRParams,
             strategy: GenerationStrategy | None = None) -> EvalReport:
    """Greedy generation per sample, then all metrics."""
    strategy = strategy or GenerationStrategy()
    hypotheses = [generate(model, s, vocab, kge_params, strategy) for s in samples]
    references = [list(s.response.tokens) for s in samples]
    return EvalReport(
        ppl=perplexity(samples, model, vocab, kge_params),
        bleu=tuple(bleu_n(hypotheses, references, n) for n in range(1, 5)),
        distinct=tuple(distinct_n(hypotheses, n) for n in range(1, 5)),
        sample_count=len(samples),
    )
