import random

import pytest

from enco.corpus import KnowledgeTriple, Utterance
from enco.entity import entity_multiset
from enco.posgen import (
    RulePhraser,
    filter_parallel_pairs,
    make_positives,
    paraphrase_utterance,
    truncate_knowledge,
)
from enco.rng import stream


class ForcedRng(random.Random):
    """random() always below any threshold; randrange pinned to a value."""

    def __init__(self, randrange_value=0):
        super().__init__(0)
        self._rr = randrange_value

    def random(self):
        return 0.0

    def randrange(self, *args):
        return self._rr


class TestRulePhraser:
    def test_empty_table_is_identity(self):
        phraser = RulePhraser()
        tokens = ["Do", "you", "know", "Leonardo", "?"]
        assert phraser.paraphrase(tokens, random.Random(0)) == tokens

    def test_forced_substitution(self):
        phraser = RulePhraser({"know": ["recognize"]}, sub_prob=1.0)
        out = phraser.paraphrase(["Do", "you", "know", "Leonardo", "?"], ForcedRng())
        assert out == ["Do", "you", "recognize", "Leonardo", "?"]

    def test_span_tokens_protected(self):
        phraser = RulePhraser({"Leonardo": ["Lion"]}, sub_prob=1.0)
        tagged = ["know", "[Ent]", "Leonardo", "[\\Ent]", "?"]
        assert phraser.paraphrase(tagged, ForcedRng()) == tagged

    def test_synonym_table_load(self, tmp_path):
        (tmp_path / "syn.tsv").write_text("know\trecognize,meet\n")
        assert RulePhraser.load_synonyms(tmp_path / "syn.tsv") == {
            "know": ["recognize", "meet"]
        }

    def test_reorder_rule(self):
        phraser = RulePhraser(reorder_rules=[(("you", "know"), (1, 0))])
        out = phraser.paraphrase(["Do", "you", "know", "?"], random.Random(0))
        assert out == ["Do", "know", "you", "?"]


class TestFilterParallelPairs:
    def test_matching_multisets_kept(self, inventory):
        pair = (Utterance.make("A", "know Leonardo"),
                Utterance.make("A", "recognize Leonardo"))
        assert filter_parallel_pairs([pair], inventory) == [pair]

    def test_mismatched_multisets_dropped(self, inventory):
        pair = (Utterance.make("A", "know Leonardo"),
                Utterance.make("A", "know DiCaprio"))
        assert filter_parallel_pairs([pair], inventory) == []

    def test_empty_list(self, inventory):
        assert filter_parallel_pairs([], inventory) == []


class TestParaphraseUtterance:
    def test_entity_multiset_preserved(self, inventory):
        phraser = RulePhraser({"know": ["recognize"]}, sub_prob=1.0)
        utt = Utterance.make("A", "Do you know Leonardo ?")
        out = paraphrase_utterance(utt, inventory, phraser, stream(0, "t"))
        assert entity_multiset([out], inventory) == entity_multiset([utt], inventory)

    def test_broken_phraser_falls_back_to_original(self, inventory):
        class Breaker:
            def paraphrase(self, tokens, rng, k):
                return ["Nolan"]  # rewrites the entity content

        utt = Utterance.make("A", "know Leonardo")
        out = paraphrase_utterance(utt, inventory, Breaker(), stream(0, "t"))
        assert out == utt


class TestTruncateKnowledge:
    def test_lambda_zero_keeps_all(self):
        kg = tuple(KnowledgeTriple(f"h{i}", "r", "t") for i in range(20))
        assert truncate_knowledge(kg, ForcedRng(randrange_value=0)) == kg

    def test_lambda_fifteen_removes_floor(self):
        kg = tuple(KnowledgeTriple(f"h{i}", "r", "t") for i in range(20))
        kept = truncate_knowledge(kg, ForcedRng(randrange_value=15))
        assert len(kept) == 17  # floor(0.15 * 20) = 3 removed

    def test_small_set_untouched_by_floor(self):
        kg = tuple(KnowledgeTriple(f"h{i}", "r", "t") for i in range(3))
        assert truncate_knowledge(kg, ForcedRng(randrange_value=15)) == kg

    def test_subset_and_order_preserved(self):
        kg = tuple(KnowledgeTriple(f"h{i}", "r", "t") for i in range(30))
        kept = truncate_knowledge(kg, stream(1, "x"))
        it = iter(kg)
        assert all(any(t == u for u in it) for t in kept)


class TestMakePositives:
    def test_count_and_shared_response(self, sample, inventory, identity_phraser):
        positives = make_positives(sample, 5, inventory, identity_phraser, seed=0)
        assert len(positives) == 5
        assert all(p.response == sample.response for p in positives)
        assert all(p.sample_id == f"s1#pos{i}" for i, p in enumerate(positives))

    def test_identity_phraser_contexts_unchanged(self, sample, inventory, identity_phraser):
        positives = make_positives(sample, 3, inventory, identity_phraser, seed=0)
        assert all(p.context == sample.context for p in positives)

    def test_knowledge_subsets_vary_across_seeds(self, inventory, identity_phraser, sample):
        kg = tuple(KnowledgeTriple(f"h{i}", "r", "t") for i in range(25))
        big = sample.__class__(sample.sample_id, sample.context, kg, sample.response)
        subsets = set()
        for seed in range(100):
            for p in make_positives(big, 1, inventory, identity_phraser, seed=seed):
                subsets.add(p.knowledge)
        assert len(subsets) > 1

    def test_deterministic(self, sample, inventory, identity_phraser):
        a = make_positives(sample, 5, inventory, identity_phraser, seed=7)
        b = make_positives(sample, 5, inventory, identity_phraser, seed=7)
        assert a == b

    def test_n_must_be_positive(self, sample, inventory, identity_phraser):
        with pytest.raises(ValueError):
            make_positives(sample, 0, inventory, identity_phraser, seed=0)
