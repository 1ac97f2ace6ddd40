"""Tables, tokenization, vocabulary, and corpus file round-trips."""

import pytest
from hypothesis import given, strategies as st

from tabent.corpus import (
    CLS_ID,
    SEP_ID,
    UNK_ID,
    CorpusError,
    Qrels,
    Query,
    Table,
    Vocabulary,
    build_vocab,
    load_corpus,
    serialize_table,
    tokenize,
    word_tokens,
    write_corpus,
)


def make_vocab(*texts):
    return build_vocab(list(texts), min_freq=1)


class TestSerializeTable:
    def test_empty_table_is_title_only(self):
        assert serialize_table(Table.make("t1", "Ducks", [], [])) == "Ducks"

    def test_single_cell(self):
        t = Table.make("t1", "T", ["a"], [["1"]])
        assert serialize_table(t) == "T ; a ; 1"

    def test_two_columns(self):
        t = Table.make("t1", "T", ["a", "b"], [["1", "2"]])
        assert serialize_table(t) == "T ; a | b ; 1 | 2"

    def test_cells_trimmed(self):
        t = Table.make("t1", " T ", [" a "], [[" 1 "]])
        assert serialize_table(t) == "T ; a ; 1"

    def test_deterministic(self):
        t = Table.make("t1", "T", ["a", "b"], [["1", "2"], ["3", "4"]])
        assert serialize_table(t) == serialize_table(t)


class TestTableInvariants:
    def test_row_arity_mismatch(self):
        with pytest.raises(CorpusError, match="row/header mismatch"):
            Table.make("t1", "T", ["a", "b"], [["1"]])

    def test_rows_without_header(self):
        with pytest.raises(CorpusError, match="header empty"):
            Table.make("t1", "T", [], [["1"]])


class TestTokenize:
    def test_basic(self):
        vocab = make_vocab("donald duck")
        seq = tokenize("Donald Duck", vocab)
        assert seq.token_ids[0] == CLS_ID
        assert seq.token_ids[-1] == SEP_ID
        assert [vocab.token_of(i) for i in seq.token_ids[1:-1]] == ["donald", "duck"]

    def test_empty_text(self):
        seq = tokenize("", make_vocab())
        assert seq.token_ids == (CLS_ID, SEP_ID)

    def test_punctuation_split(self):
        vocab = make_vocab("a - 1")
        seq = tokenize("A-1", vocab)
        assert [vocab.token_of(i) for i in seq.token_ids[1:-1]] == ["a", "-", "1"]

    def test_unknown_maps_to_unk(self):
        seq = tokenize("zzz", make_vocab("abc"))
        assert seq.token_ids[1] == UNK_ID

    def test_special_offsets_empty(self):
        seq = tokenize("hi", make_vocab("hi"))
        assert seq.offsets[0] == (0, 0)
        assert seq.offsets[-1] == (2, 2)

    def test_truncation_keeps_head_and_sep(self):
        vocab = make_vocab("a b c d e f")
        seq = tokenize("a b c d e f", vocab, max_len=4)
        assert len(seq) == 4
        assert seq.token_ids[0] == CLS_ID
        assert seq.token_ids[-1] == SEP_ID
        assert [vocab.token_of(i) for i in seq.token_ids[1:-1]] == ["a", "b"]

    @given(st.text(max_size=60))
    def test_offsets_recover_source(self, text):
        vocab = build_vocab([text])
        seq = tokenize(text, vocab)
        for pos in seq.content_positions():
            s, e = seq.offsets[pos]
            assert s < e
            assert vocab.token_of(seq.token_ids[pos]) == text[s:e].lower()

    @given(st.text(max_size=60))
    def test_offsets_ascending_nonoverlapping(self, text):
        seq = tokenize(text, build_vocab([text]))
        real = [(s, e) for s, e in seq.offsets if s < e]
        for (s1, e1), (s2, e2) in zip(real, real[1:]):
            assert e1 <= s2


class TestBuildVocab:
    def test_min_freq_threshold(self):
        vocab = build_vocab(["a a b"], min_freq=2)
        assert "a" in vocab
        assert "b" not in vocab

    def test_empty_corpus(self):
        assert len(build_vocab([], min_freq=1)) == 4

    def test_frequency_then_lex_order(self):
        vocab = build_vocab(["x y", "y"], min_freq=1)
        assert vocab.tokens() == ["y", "x"]

    def test_tie_broken_lexicographically(self):
        vocab = build_vocab(["b a"], min_freq=1)
        assert vocab.tokens() == ["a", "b"]

    def test_reserved_ids(self):
        vocab = build_vocab(["a"])
        assert vocab.id_of("[PAD]") == 0
        assert vocab.id_of("[CLS]") == 2
        assert vocab.id_of("a") == 4

    def test_min_freq_validation(self):
        with pytest.raises(CorpusError):
            build_vocab(["a"], min_freq=0)


class TestQrels:
    def test_duplicate_rejected(self):
        with pytest.raises(CorpusError, match="duplicate"):
            Qrels([("q1", "t1", 1), ("q1", "t1", 2)])

    def test_negative_rejected(self):
        with pytest.raises(CorpusError):
            Qrels([("q1", "t1", -1)])

    def test_relevant_filters_grade_zero(self):
        qrels = Qrels([("q1", "t1", 0), ("q1", "t2", 2)])
        assert qrels.relevant("q1") == {"t2": 2}
        assert qrels.judged("q1") == {"t1": 0, "t2": 2}


class TestLoadCorpus:
    def _write(self, tmp_path, tables, queries, qrels):
        tp, qp, rp = tmp_path / "t.jsonl", tmp_path / "q.jsonl", tmp_path / "r.txt"
        tp.write_text(tables)
        qp.write_text(queries)
        rp.write_text(qrels)
        return str(tp), str(qp), str(rp)

    def test_round_trip_counts(self, tmp_path):
        paths = self._write(
            tmp_path,
            '{"id": "t1", "title": "A", "header": ["h"], "rows": [["x"]]}\n'
            '{"id": "t2", "title": "B", "header": [], "rows": []}\n',
            '{"id": "q1", "text": "find a"}\n',
            "q1 t1 1\n",
        )
        tables, queries, qrels = load_corpus(*paths)
        assert (len(tables), len(queries), len(qrels)) == (2, 1, 1)

    def test_unknown_table_id(self, tmp_path):
        paths = self._write(
            tmp_path,
            '{"id": "t1", "title": "A", "header": [], "rows": []}\n',
            '{"id": "q1", "text": "x"}\n',
            "q1 missing 1\n",
        )
        with pytest.raises(CorpusError, match="unknown table id"):
            load_corpus(*paths)

    def test_row_arity_error_includes_line(self, tmp_path):
        paths = self._write(
            tmp_path,
            '{"id": "t1", "title": "A", "header": ["h"], "rows": [["x", "y"]]}\n',
            '{"id": "q1", "text": "x"}\n',
            "",
        )
        with pytest.raises(CorpusError, match="line 1.*row/header mismatch"):
            load_corpus(*paths)

    def test_malformed_json_names_line(self, tmp_path):
        paths = self._write(
            tmp_path,
            '{"id": "t1", "title": "A", "header": [], "rows": []}\n{oops\n',
            '{"id": "q1", "text": "x"}\n',
            "",
        )
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(*paths)

    def test_write_then_load_round_trips(self, tmp_path):
        tables = [
            Table.make("t1", "Title one", ["a", "b"], [["1", "2"], ["3", "4"]]),
            Table.make("t2", "Title two", [], []),
        ]
        queries = [Query("q1", "what is in t1")]
        qrels = Qrels([("q1", "t1", 1)])
        paths = (str(tmp_path / "t.jsonl"), str(tmp_path / "q.jsonl"), str(tmp_path / "r.txt"))
        write_corpus(tables, queries, qrels, *paths)
        tables2, queries2, qrels2 = load_corpus(*paths)
        assert tables2 == tables
        assert queries2 == queries
        assert qrels2 == qrels


def test_word_tokens_lowercase():
    assert word_tokens("Ab-C 12") == ["ab", "-", "c", "12"]


def test_vocabulary_json_round_trip():
    vocab = build_vocab(["alpha beta beta"])
    again = Vocabulary.from_json(vocab.to_json())
    assert again.tokens() == vocab.tokens()
    assert again.id_of("beta") == vocab.id_of("beta")
