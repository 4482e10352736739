import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from maqam_asa.annotations import (
    ERROR_TYPES,
    CorpusStats,
    ErrorSpan,
    ErrorType,
    SongAnnotations,
    corpus_stats,
    parse_annotations,
    serialize_annotations,
)
from maqam_asa.errors import InvertedSpanError, MalformedJsonError, UnknownTypeError

# Verbatim sample of the annotation tool's export format.
EXPORT_SAMPLE = """\
[
  {
    "start": 102.404,
    "end": 103.064,
    "type": "fine_pitch_error",
    "detail": "Out of tone"
  },
  {
    "start": 81.196,
    "end": 82.536,
    "type": "fine_pitch_error",
    "detail": "Out of tone"
  }
]
"""


class TestParse:
    def test_export_sample(self):
        ann = parse_annotations(EXPORT_SAMPLE, song_id="demo")
        assert len(ann) == 2
        assert all(s.type is ErrorType.FINE_PITCH for s in ann.spans)
        starts_ends = {(s.start, s.end) for s in ann.spans}
        assert (102.404, 103.064) in starts_ends
        assert (81.196, 82.536) in starts_ends
        assert ann.spans[0].start == 81.196  # kept sorted by start

    def test_empty_array(self):
        assert len(parse_annotations("[]")) == 0

    def test_inverted_span(self):
        text = json.dumps([{"start": 2.0, "end": 1.0, "type": "rhythm_error"}])
        with pytest.raises(InvertedSpanError):
            parse_annotations(text)

    def test_unknown_type(self):
        text = json.dumps([{"start": 0.0, "end": 1.0, "type": "tempo_error"}])
        with pytest.raises(UnknownTypeError):
            parse_annotations(text)

    def test_malformed_json(self):
        with pytest.raises(MalformedJsonError):
            parse_annotations("{not json")
        with pytest.raises(MalformedJsonError):
            parse_annotations('{"start": 1}')  # not an array
        with pytest.raises(MalformedJsonError):
            parse_annotations('[{"start": 1.0}]')  # missing keys

    def test_unknown_fields_preserved(self):
        text = json.dumps(
            [{"start": 1.0, "end": 2.0, "type": "rhythm_error", "annotator": "kh"}]
        )
        ann = parse_annotations(text)
        again = parse_annotations(serialize_annotations(ann))
        assert again.spans[0].extras == (("annotator", "kh"),)


class TestSerialize:
    def test_round_trip_export_sample(self):
        ann = parse_annotations(EXPORT_SAMPLE)
        text = serialize_annotations(ann)
        again = parse_annotations(text)
        assert again.spans == ann.spans
        # millisecond values survive exactly
        assert '"start": 81.196' in text
        assert '"start": 102.404' in text

    def test_three_decimals_minimum(self):
        ann = SongAnnotations(
            song_id="x",
            spans=(ErrorSpan(start=1.5, end=2.0, type=ErrorType.RHYTHM),),
        )
        text = serialize_annotations(ann)
        assert '"start": 1.500' in text
        assert '"end": 2.000' in text

    def test_empty(self):
        assert serialize_annotations(SongAnnotations(song_id="x")) == "[]"

    def test_review_level_omitted_unless_set(self):
        base = ErrorSpan(start=0.5, end=1.0, type=ErrorType.MODAL_DRIFT)
        text = serialize_annotations(SongAnnotations(song_id="x", spans=(base,)))
        assert "review_level" not in text
        reviewed = ErrorSpan(start=0.5, end=1.0, type=ErrorType.MODAL_DRIFT,
                             review_level=2)
        text = serialize_annotations(SongAnnotations(song_id="x", spans=(reviewed,)))
        assert '"review_level": 2' in text
        assert parse_annotations(text).spans[0].review_level == 2


span_strategy = st.builds(
    lambda start, dur, etype, detail: ErrorSpan(
        start=round(start, 3), end=round(start + dur, 3), type=etype, detail=detail
    ),
    start=st.floats(min_value=0.0, max_value=500.0),
    dur=st.floats(min_value=0.002, max_value=30.0),
    etype=st.sampled_from(list(ERROR_TYPES)),
    detail=st.one_of(st.none(), st.text(max_size=20)),
)


@given(st.lists(span_strategy, max_size=12))
def test_round_trip_identity(spans):
    ann = SongAnnotations(song_id="prop", spans=tuple(spans))
    again = parse_annotations(serialize_annotations(ann), song_id="prop")
    assert again == ann


class TestCorpusStats:
    def _sets(self, counts):
        sets = []
        for i, (etype, n) in enumerate(zip(ERROR_TYPES, counts)):
            spans = tuple(
                ErrorSpan(start=float(j), end=float(j) + 0.5, type=etype)
                for j in range(n)
            )
            sets.append(SongAnnotations(song_id=f"song{i}", spans=spans))
        return sets

    def test_published_distribution(self):
        stats = corpus_stats(self._sets((150, 46, 25)))
        assert stats.total == 221
        assert stats.percentages == {
            "fine_pitch_error": 67.9,
            "rhythm_error": 20.8,
            "modal_drift_error": 11.3,
        }

    def test_single_span(self):
        stats = corpus_stats(self._sets((0, 1, 0)))
        assert stats.percentages["rhythm_error"] == 100.0
        assert stats.total == 1

    def test_songs_with_type(self):
        stats = corpus_stats(self._sets((2, 0, 3)))
        assert stats.songs_with_type == {
            "fine_pitch_error": 1,
            "rhythm_error": 0,
            "modal_drift_error": 1,
        }

    @given(st.tuples(st.integers(0, 200), st.integers(0, 200), st.integers(0, 200)))
    def test_percentages_sum(self, counts):
        stats = corpus_stats(self._sets(counts))
        if stats.total:
            assert abs(sum(stats.percentages.values()) - 100.0) <= 0.2
