"""Recognizer rules, span alignment, and type grouping."""

import json

import pytest
from hypothesis import given, strategies as st

from tabent.corpus import build_vocab, tokenize
from tabent.entities import (
    AnnotationError,
    EntitySpan,
    EntityTypeSet,
    RuleRecognizer,
    align,
    annotate,
    group_by_type,
    load_annotation_file,
    type_ids_for,
)

TYPES = EntityTypeSet()


def idx(name):
    return TYPES.index(name)


class TestRecognizerRules:
    def setup_method(self):
        self.rec = RuleRecognizer(TYPES, {"oregon": "GPE", "donald duck": "PERSON"})

    def test_four_digit_year(self):
        assert self.rec.recognize("1995") == [(0, 4, idx("DATE"))]

    def test_out_of_range_number_is_cardinal(self):
        assert self.rec.recognize("3995") == [(0, 4, idx("CARDINAL"))]

    def test_bare_numeral(self):
        assert self.rec.recognize("3 ducks") == [(0, 1, idx("CARDINAL"))]

    def test_rule_composition_with_gazetteer(self):
        spans = self.rec.recognize("born in 1934 in Oregon")
        assert spans == [(8, 12, idx("DATE")), (16, 22, idx("GPE"))]

    def test_month_name_with_day_and_year_single_span(self):
        spans = self.rec.recognize("on January 5, 1999 it rained")
        assert spans == [(3, 18, idx("DATE"))]

    def test_clock_time(self):
        assert self.rec.recognize("at 12:30") == [(3, 8, idx("TIME"))]

    def test_percent(self):
        assert self.rec.recognize("up 42.5%") == [(3, 8, idx("PERCENT"))]

    def test_money(self):
        assert self.rec.recognize("cost $1,200.50") == [(5, 14, idx("MONEY"))]

    def test_ordinal_suffix_and_word(self):
        assert self.rec.recognize("the 1st") == [(4, 7, idx("ORDINAL"))]
        assert self.rec.recognize("the third one") == [(4, 9, idx("ORDINAL"))]

    def test_gazetteer_case_insensitive_longest_match(self):
        rec = RuleRecognizer(TYPES, {"new york": "GPE", "new york city": "GPE"})
        assert rec.recognize("in New York City") == [(3, 16, idx("GPE"))]

    def test_unknown_gazetteer_type_rejected(self):
        with pytest.raises(AnnotationError, match="not in type set"):
            RuleRecognizer(TYPES, {"x": "NOPE"})

    def test_deterministic(self):
        text = "Donald Duck paid $5 on January 3, 1950 at 9:15"
        assert self.rec.recognize(text) == self.rec.recognize(text)

    def test_idempotent_on_own_slices(self):
        text = "Donald Duck visited Oregon on January 3, 1950 paying $5 by 9:15 am, 42% done, the 2nd time"
        for cs, ce, tidx in self.rec.recognize(text):
            inner = self.rec.recognize(text[cs:ce])
            assert inner == [(0, ce - cs, tidx)]

    def test_no_overlaps(self):
        text = "1995 2nd January 1995 12:30 $12 99%"
        spans = self.rec.recognize(text)
        for (s1, e1, _), (s2, e2, _) in zip(spans, spans[1:]):
            assert e1 <= s2


class TestAlign:
    def _seq(self, text, max_len=None):
        return tokenize(text, build_vocab([text]), max_len)

    def test_char_span_to_token_span(self):
        text = "donald duck cartoons"
        seq = self._seq(text)
        spans = align([(0, 11, idx("PERSON"))], seq)
        assert len(spans) == 1
        assert (spans[0].token_start, spans[0].token_end) == (1, 2)

    def test_fully_truncated_span_dropped(self):
        text = "a b c d e f g"
        seq = self._seq(text, max_len=4)
        spans = align([(8, 9, idx("ORG"))], seq)
        assert spans == []

    def test_partial_token_overlap_includes_token(self):
        text = "duckburg city"
        seq = self._seq(text)
        spans = align([(0, 4, idx("GPE"))], seq)
        assert (spans[0].token_start, spans[0].token_end) == (1, 1)

    def test_never_covers_special_positions(self):
        text = "oregon"
        seq = self._seq(text)
        spans = align([(0, 6, idx("GPE"))], seq)
        positions = set(spans[0].token_positions())
        assert 0 not in positions
        assert len(seq) - 1 not in positions


class TestGrouping:
    def _span(self, t, k):
        return EntitySpan(t * 10, t * 10 + 2, t + 1, t + 1, k)

    def test_partition_sizes(self):
        spans = [self._span(0, idx("DATE")), self._span(1, idx("DATE")), self._span(2, idx("GPE"))]
        ann = group_by_type(spans, len(TYPES))
        sizes = [len(g) for g in ann.grouped]
        assert sizes[idx("DATE")] == 2
        assert sizes[idx("GPE")] == 1
        assert sum(sizes) == 3

    def test_empty(self):
        ann = group_by_type([], len(TYPES))
        assert all(len(g) == 0 for g in ann.grouped)
        assert ann.present_types() == []

    def test_group_preserves_source_order(self):
        spans = [self._span(0, idx("ORG")), self._span(1, idx("ORG"))]
        ann = group_by_type(spans, len(TYPES))
        assert ann.grouped[idx("ORG")] == tuple(spans)

    @given(st.lists(st.integers(min_value=0, max_value=9), max_size=20))
    def test_partition_property(self, type_choices):
        spans = [
            EntitySpan(i * 5, i * 5 + 3, i + 1, i + 1, k)
            for i, k in enumerate(type_choices)
        ]
        ann = group_by_type(spans, 10)
        assert sum(len(g) for g in ann.grouped) == len(spans)
        seen = set()
        for g in ann.grouped:
            for s in g:
                assert s not in seen
                seen.add(s)


class TestTypeIds:
    def test_positions_marked(self):
        text = "mira ashford sailed in 1950"
        vocab = build_vocab([text])
        seq = tokenize(text, vocab)
        rec = RuleRecognizer(TYPES, {"mira ashford": "PERSON"})
        ann = annotate(text, seq, rec)
        ids = type_ids_for(seq, ann)
        assert ids[1] == idx("PERSON") and ids[2] == idx("PERSON")
        assert ids[5] == idx("DATE")
        assert ids[0] == -1 and ids[-1] == -1

    def test_none_annotation(self):
        seq = tokenize("a b", build_vocab(["a b"]))
        assert type_ids_for(seq, None) == [-1] * len(seq)


class TestSidecar:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        path.write_text(
            json.dumps({"owner_id": "q1", "kind": "query",
                        "spans": [[0, 4, "DATE"], [5, 11, "GPE"]]}) + "\n"
        )
        loaded = load_annotation_file(str(path), TYPES)
        assert loaded[("query", "q1")] == [(0, 4, idx("DATE")), (5, 11, idx("GPE"))]

    def test_unknown_type_name(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        path.write_text(json.dumps(
            {"owner_id": "q1", "kind": "query", "spans": [[0, 4, "WHAT"]]}) + "\n")
        with pytest.raises(Exception, match="unknown type_name"):
            load_annotation_file(str(path), TYPES)

    def test_bad_kind(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        path.write_text(json.dumps(
            {"owner_id": "q1", "kind": "passage", "spans": []}) + "\n")
        with pytest.raises(Exception, match="query|table"):
            load_annotation_file(str(path), TYPES)


def test_default_inventory_has_ten_types():
    assert len(TYPES) == 10
    assert TYPES[0] == "PERSON"


def test_custom_inventory():
    custom = EntityTypeSet(("A", "B", "C"))
    assert len(custom) == 3
    assert custom.index("C") == 2
    with pytest.raises(AnnotationError):
        custom.index("D")
