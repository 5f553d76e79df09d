import json

import pytest
from hypothesis import given, strategies as st

from enco.corpus import (
    RESERVED_TOKENS,
    SEP_ID,
    UNK_ID,
    CorpusError,
    KGDSample,
    KnowledgeTriple,
    Utterance,
    Vocabulary,
    build_vocab,
    context_token_ids,
    detokenize,
    load_corpus,
    load_kg,
    response_token_ids,
    save_corpus,
    save_kg,
    tokenize,
)


def make_sample(sid="s", context_texts=("hi",), response="hello there"):
    speakers = ["A", "B"]
    context = tuple(
        Utterance.make(speakers[i % 2], t) for i, t in enumerate(context_texts)
    )
    resp_speaker = speakers[len(context_texts) % 2]
    return KGDSample(sid, context, (), Utterance.make(resp_speaker, response))


class TestTokenize:
    def test_empty(self):
        assert tokenize("") == []

    def test_special_tokens_and_punctuation(self):
        assert tokenize("Do you know [Ent]Leonardo[\\Ent]?") == [
            "Do", "you", "know", "[Ent]", "Leonardo", "[\\Ent]", "?",
        ]

    def test_cjk_single_characters(self):
        assert tokenize("你好吗") == ["你", "好", "吗"]

    def test_mixed_cjk_and_latin(self):
        assert tokenize("我喜欢 Titanic !") == ["我", "喜", "欢", "Titanic", "!"]

    def test_detokenize_glues_cjk(self):
        assert detokenize(["你", "好", "吗"]) == "你好吗"

    def test_detokenize_glues_punctuation(self):
        assert detokenize(["know", "Leonardo", "?"]) == "know Leonardo?"

    @given(st.text(alphabet="ab你好 ?.,!", max_size=40))
    def test_round_trip(self, text):
        tokens = tokenize(text)
        assert tokenize(detokenize(tokens)) == tokens


class TestDataModel:
    def test_speaker_validated(self):
        with pytest.raises(CorpusError):
            Utterance.make("C", "hi")

    def test_empty_context_rejected(self):
        with pytest.raises(CorpusError):
            KGDSample("x", (), (), Utterance.make("B", "hi"))

    def test_same_speaker_turnaround_rejected(self):
        with pytest.raises(CorpusError):
            KGDSample("x", (Utterance.make("A", "hi"),), (),
                      Utterance.make("A", "hello"))

    def test_empty_triple_slot_rejected(self):
        with pytest.raises(CorpusError):
            KnowledgeTriple("", "r", "t")

    def test_record_round_trip(self, sample):
        assert KGDSample.from_record(sample.to_record()) == sample


class TestVocabulary:
    def test_empty_corpus_keeps_reserved_tokens(self):
        vocab = build_vocab([])
        assert tuple(vocab.id_to_token) == RESERVED_TOKENS

    def test_min_freq_filter(self):
        sample = make_sample(response="a a b")
        assert build_vocab([sample], min_freq=2).non_reserved() == ["a"]

    def test_frequency_then_lexicographic_order(self):
        sample = make_sample(response="a a b")
        vocab = build_vocab([sample], min_freq=1)
        assert vocab.non_reserved() == ["a", "b", "hi"]  # context "hi" counts too
        assert vocab.token_to_id["a"] < vocab.token_to_id["b"]

    def test_unknown_token_maps_to_unk(self):
        vocab = build_vocab([])
        assert vocab.encode(["mystery"]) == [UNK_ID]

    def test_save_load_round_trip(self, tmp_path, sample):
        vocab = build_vocab([sample])
        vocab.save(tmp_path / "vocab.txt")
        loaded = Vocabulary.load(tmp_path / "vocab.txt")
        assert loaded.id_to_token == vocab.id_to_token

    def test_corrupt_reserved_block_rejected(self, tmp_path):
        (tmp_path / "vocab.txt").write_text("[BAD]\n" * 8)
        with pytest.raises(CorpusError):
            Vocabulary.load(tmp_path / "vocab.txt")


class TestCorpusIO:
    def test_round_trip(self, tmp_path, sample):
        path = tmp_path / "c.jsonl"
        save_corpus([sample], path)
        assert load_corpus(path) == [sample]

    def test_missing_field_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        record = make_sample().to_record()
        del record["response"]
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(CorpusError, match=r":1:"):
            load_corpus(path)

    def test_file_order_preserved(self, tmp_path):
        samples = [make_sample(sid=f"s{i}") for i in range(3)]
        path = tmp_path / "c.jsonl"
        save_corpus(samples, path)
        assert [s.sample_id for s in load_corpus(path)] == ["s0", "s1", "s2"]

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        save_corpus([make_sample(), make_sample()], path)
        with pytest.raises(CorpusError, match="duplicate"):
            load_corpus(path)

    def test_kg_round_trip(self, tmp_path):
        triples = [KnowledgeTriple("a", "r", "b"), KnowledgeTriple("b", "r", "c")]
        save_kg(triples, tmp_path / "kg.tsv")
        assert load_kg(tmp_path / "kg.tsv") == triples

    def test_kg_bad_column_count(self, tmp_path):
        (tmp_path / "kg.tsv").write_text("a\tb\n")
        with pytest.raises(CorpusError, match=r":1:"):
            load_kg(tmp_path / "kg.tsv")


class TestLinearization:
    def test_sep_joined(self, vocab, sample):
        ids = context_token_ids(sample, vocab)
        assert ids.count(SEP_ID) == len(sample.context) - 1

    def test_oldest_dropped_first(self, vocab):
        sample = make_sample(context_texts=("old old old old", "brand new"))
        v = build_vocab([sample])
        ids = context_token_ids(sample, v, max_tokens=3)
        assert v.decode(ids) == ["brand", "new"]

    def test_response_truncated(self, vocab, sample):
        assert len(response_token_ids(sample, vocab, max_tokens=2)) == 2
