import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trialign import (DataError, SurprisalRecord, compute_id, dataset_id,
                      rank_variants, read_surprisals)


class TestComputeId:
    def test_simple_sum(self):
        rec = compute_id(SurprisalRecord("a", (2.0, 3.0, 5.0)))
        assert rec.id_value == 10.0
        assert math.isclose(rec.mean_per_token, 10.0 / 3.0)
        assert rec.token_count == 3

    def test_single_token(self):
        rec = compute_id(SurprisalRecord("a", (4.2,)))
        assert rec.id_value == 4.2 and rec.mean_per_token == 4.2

    def test_appending_token_strictly_increases(self):
        base = compute_id(SurprisalRecord("a", (1.0, 0.5)))
        longer = compute_id(SurprisalRecord("a", (1.0, 0.5, 0.25)))
        assert longer.id_value > base.id_value

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            compute_id(SurprisalRecord("a", ()))

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            compute_id(SurprisalRecord("a", (1.0, -0.1)))

    def test_nonfinite_rejected(self):
        with pytest.raises(DataError):
            compute_id(SurprisalRecord("a", (1.0, float("nan"))))

    def test_id_equals_tokens_times_mean(self):
        rec = compute_id(SurprisalRecord("a", (0.3, 1.7, 2.2, 0.05)))
        assert math.isclose(rec.id_value, rec.token_count * rec.mean_per_token,
                            rel_tol=1e-15)

    @given(st.lists(st.floats(0, 50, allow_nan=False), min_size=1, max_size=20),
           st.lists(st.floats(0, 50, allow_nan=False), min_size=1, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_concatenation_adds_exactly(self, a, b):
        ida = compute_id(SurprisalRecord("a", tuple(a))).id_value
        idb = compute_id(SurprisalRecord("b", tuple(b))).id_value
        idab = compute_id(SurprisalRecord("ab", tuple(a) + tuple(b))).id_value
        assert math.isclose(idab, ida + idb, rel_tol=1e-12, abs_tol=1e-12)


class TestDatasetId:
    def test_mean_of_ids(self):
        recs = [SurprisalRecord("a", (10.0,)), SurprisalRecord("b", (20.0,))]
        stats = dataset_id(recs)
        assert stats.mean_id == 15.0

    def test_single_record_is_itself(self):
        stats = dataset_id([SurprisalRecord("a", (2.0, 2.0))])
        assert stats.mean_id == 4.0 and stats.mean_tokens == 2.0
        assert stats.mean_per_token == 2.0

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            dataset_id([])


class TestRankVariants:
    def test_descending_by_mean_id(self):
        # published per-variant means: condensed 1/2/4-phrase captions
        order = rank_variants({"a": 26.81, "b": 69.48, "c": 149.05})
        assert order == ["c", "b", "a"]

    def test_stable_on_ties(self):
        assert rank_variants({"x": 5.0, "y": 5.0, "z": 7.0}) == ["z", "x", "y"]

    def test_singleton(self):
        assert rank_variants({"only": 1.0}) == ["only"]

    def test_output_permutes_input_keys(self):
        data = {"a": 3.0, "b": 1.0, "c": 2.0}
        assert sorted(rank_variants(data)) == sorted(data)


class TestReadSurprisals:
    def test_roundtrip(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text('{"id": "a", "surprisals": [1.0, 2.0]}\n'
                     '{"id": "b", "surprisals": [0.5], "variant": "dense"}\n')
        records = read_surprisals(p)
        assert records[0].surprisals == (1.0, 2.0)
        assert records[1].variant == "dense"

    def test_malformed_line_reports_number(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text('{"id": "a", "surprisals": [1.0]}\n{oops\n')
        with pytest.raises(DataError, match="line 2"):
            read_surprisals(p)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text("")
        with pytest.raises(DataError):
            read_surprisals(p)

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text('{"id": "a", "surprisals": [1.0]}\n'
                     '{"id": "a", "surprisals": [2.0]}\n')
        with pytest.raises(DataError, match="duplicate"):
            read_surprisals(p)
