import pytest

from enco.corpus import DEL, KGDSample, KnowledgeTriple, Utterance
from enco.neggen import (
    EditKind,
    EditLog,
    EntityEdit,
    apply_edits_context,
    apply_edits_knowledge,
    load_edit_logs,
    make_negatives,
    sample_edits,
    save_edit_logs,
)
from enco.rng import stream


class TestEditValidation:
    def test_delete_carries_no_replacement(self):
        with pytest.raises(ValueError):
            EntityEdit(("x", "A"), EditKind.DELETE, ("y", "A"))

    def test_relevant_needs_same_type(self):
        with pytest.raises(ValueError):
            EntityEdit(("x", "A"), EditKind.RELEVANT_REPLACE, ("y", "B"))

    def test_irrelevant_needs_different_type(self):
        with pytest.raises(ValueError):
            EntityEdit(("x", "A"), EditKind.IRRELEVANT_REPLACE, ("y", "A"))

    def test_one_edit_per_entity(self):
        edit = EntityEdit(("x", "A"), EditKind.DELETE)
        with pytest.raises(ValueError):
            EditLog("s", (edit, edit))

    def test_log_round_trip(self, tmp_path):
        logs = [EditLog("s", (
            EntityEdit(("x", "A"), EditKind.DELETE),
            EntityEdit(("y", "A"), EditKind.RELEVANT_REPLACE, ("z", "A")),
        ))]
        save_edit_logs(logs, tmp_path / "logs.jsonl")
        assert load_edit_logs(tmp_path / "logs.jsonl") == logs


class TestSampleEdits:
    def test_p_zero_selects_nothing(self, inventory):
        log = sample_edits([("Leonardo", "PERSON")], inventory, stream(0, "a"),
                           p_change=0.0)
        assert log.edits == ()

    def test_forced_delete(self, inventory):
        log = sample_edits([("Leonardo", "PERSON")], inventory, stream(0, "a"),
                           p_change=1.0, weights=(1.0, 0.0, 0.0))
        assert [e.kind for e in log.edits] == [EditKind.DELETE]

    def test_relevant_pool_excludes_target(self, inventory):
        for seed in range(20):
            log = sample_edits([("Leonardo", "PERSON")], inventory, stream(seed, "a"),
                               p_change=1.0, weights=(0.0, 1.0, 0.0))
            (edit,) = log.edits
            assert edit.kind is EditKind.RELEVANT_REPLACE
            assert edit.replacement[0] != "Leonardo"
            assert edit.replacement[1] == "PERSON"

    def test_irrelevant_different_type(self, inventory):
        log = sample_edits([("Leonardo", "PERSON")], inventory, stream(0, "a"),
                           p_change=1.0, weights=(0.0, 0.0, 1.0))
        assert log.edits[0].replacement[1] != "PERSON"

    def test_single_type_inventory_downgrades_to_delete(self):
        from enco.entity import EntityInventory
        inv = EntityInventory({"PERSON": {"only"}})
        log = sample_edits([("only", "PERSON")], inv, stream(0, "a"),
                           p_change=1.0, weights=(0.0, 1.0, 0.0))
        assert log.edits[0].kind is EditKind.DELETE

    def test_bad_weights_rejected(self, inventory):
        with pytest.raises(ValueError):
            sample_edits([], inventory, stream(0, "a"), weights=(0.5, 0.2, 0.2))


class TestApplyEdits:
    def test_empty_log_context_identity(self, sample, inventory):
        log = EditLog("s", ())
        assert apply_edits_context(sample.context, log, inventory) == sample.context

    def test_delete_marks_mention(self, inventory):
        context = (Utterance.make("A", "know Leonardo"),)
        log = EditLog("s", (EntityEdit(("Leonardo", "PERSON"), EditKind.DELETE),))
        out = apply_edits_context(context, log, inventory)
        assert out[0].tokens == ("know", DEL)

    def test_replace_hits_every_mention(self, inventory):
        context = (Utterance.make("A", "Leonardo met Leonardo"),)
        log = EditLog("s", (EntityEdit(("Leonardo", "PERSON"),
                                       EditKind.RELEVANT_REPLACE,
                                       ("DiCaprio", "PERSON")),))
        out = apply_edits_context(context, log, inventory)
        assert out[0].tokens == ("DiCaprio", "met", "DiCaprio")

    def test_empty_log_knowledge_identity(self, sample):
        assert apply_edits_knowledge(sample.knowledge, EditLog("s", ())) == sample.knowledge

    def test_delete_mirrors_into_slot(self):
        kg = (KnowledgeTriple("Leonardo", "starred_in", "Titanic"),)
        log = EditLog("s", (EntityEdit(("Leonardo", "PERSON"), EditKind.DELETE),))
        assert apply_edits_knowledge(kg, log) == (
            KnowledgeTriple(DEL, "starred_in", "Titanic"),
        )

    def test_replace_rewrites_head_and_tail(self):
        kg = (KnowledgeTriple("a", "r", "x"), KnowledgeTriple("x", "r", "b"))
        log = EditLog("s", (EntityEdit(("x", "PERSON"),
                                       EditKind.RELEVANT_REPLACE, ("y", "PERSON")),))
        out = apply_edits_knowledge(kg, log)
        assert out == (KnowledgeTriple("a", "r", "y"), KnowledgeTriple("y", "r", "b"))

    def test_relations_never_touched(self):
        kg = (KnowledgeTriple("a", "x", "b"),)
        log = EditLog("s", (EntityEdit(("x", "PERSON"), EditKind.DELETE),))
        assert apply_edits_knowledge(kg, log)[0].relation == "x"


class TestMakeNegatives:
    def test_count_and_logs(self, sample, inventory):
        negatives, logs = make_negatives(sample, 5, inventory, seed=0)
        assert len(negatives) == 5 and len(logs) == 5
        assert all(n.response == sample.response for n in negatives)

    def test_no_entity_fallback_still_differs(self, inventory):
        plain = KGDSample(
            "p", (Utterance.make("A", "how are things going"),), (),
            Utterance.make("B", "fine thanks"),
        )
        negatives, _ = make_negatives(plain, 3, inventory, seed=0)
        for neg in negatives:
            assert neg.context != plain.context
            assert DEL in [t for u in neg.context for t in u.tokens]

    def test_deterministic(self, sample, inventory):
        a = make_negatives(sample, 5, inventory, seed=3)
        b = make_negatives(sample, 5, inventory, seed=3)
        assert a == b

    def test_every_negative_has_an_effective_change(self, sample, inventory):
        negatives, logs = make_negatives(sample, 10, inventory, seed=1)
        for neg, log in zip(negatives, logs):
            assert log.edits  # redraw/force guarantees a non-empty log here
            assert neg.context != sample.context or neg.knowledge != sample.knowledge
