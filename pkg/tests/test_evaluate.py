import itertools
import json

import numpy as np
import pytest

from maqam_asa.annotations import ERROR_TYPES, ErrorSpan, ErrorType, SongAnnotations
from maqam_asa.evaluate import (
    EvalReport,
    PredictedEvent,
    ScoredWindow,
    build_events,
    detection_prf,
    match_events,
    per_class_metrics,
    threshold_search,
)

# Published matched-detection confusion matrix and ground-truth class totals.
CONFUSION = [[51, 4, 2], [6, 19, 0], [2, 1, 2]]
TRUTH_TOTALS = (150, 46, 25)


class TestDetectionPrf:
    def test_published_operating_point(self):
        p, r, f1 = detection_prf(tp=87, fp=250, fn=134)
        assert p == pytest.approx(0.258, abs=0.001)
        assert r == pytest.approx(0.394, abs=0.001)
        assert f1 == pytest.approx(0.311, abs=0.001)

    def test_all_zero(self):
        assert detection_prf(0, 0, 0) == (0.0, 0.0, 0.0)

    def test_perfect(self):
        assert detection_prf(10, 0, 0) == (1.0, 1.0, 1.0)


class TestPerClassMetrics:
    def test_published_table(self):
        per_class, macro = per_class_metrics(CONFUSION, TRUTH_TOTALS)
        fine = per_class["fine_pitch_error"]
        rhythm = per_class["rhythm_error"]
        modal = per_class["modal_drift_error"]
        assert fine["detected"] == 57
        assert rhythm["detected"] == 25
        assert modal["detected"] == 5
        assert fine["precision"] == pytest.approx(0.895, abs=0.001)
        assert rhythm["precision"] == pytest.approx(0.760, abs=0.001)
        assert modal["precision"] == pytest.approx(0.400, abs=0.001)
        assert fine["recall"] == pytest.approx(0.340, abs=0.001)
        assert rhythm["recall"] == pytest.approx(0.413, abs=0.001)
        assert modal["recall"] == pytest.approx(0.080, abs=0.001)
        assert fine["f1"] == pytest.approx(0.492, abs=0.001)
        assert rhythm["f1"] == pytest.approx(0.536, abs=0.001)
        assert modal["f1"] == pytest.approx(0.133, abs=0.001)
        assert macro == pytest.approx(0.387, abs=0.0005)

    def test_identity_confusion_perfect(self):
        per_class, macro = per_class_metrics(np.diag([5, 7, 3]), (5, 7, 3))
        assert macro == 1.0
        assert all(row["f1"] == 1.0 for row in per_class.values())

    def test_empty_row_zero(self):
        per_class, _ = per_class_metrics([[0, 0, 0], [0, 5, 0], [0, 0, 5]], (4, 5, 5))
        row = per_class["fine_pitch_error"]
        assert row == {"detected": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}

    def test_recall_reconciliation(self, rng):
        # sum of recalls weighted by truth totals equals trace / total truths
        confusion = rng.integers(0, 20, (3, 3))
        totals = confusion.sum(axis=1) + rng.integers(1, 10, 3)
        per_class, _ = per_class_metrics(confusion, totals)
        weighted = sum(
            per_class[t.value]["recall"] * totals[k] for k, t in enumerate(ERROR_TYPES)
        )
        assert weighted == pytest.approx(np.trace(confusion), abs=1e-9)


def window(song, start, prob, probs3=(0.8, 0.1, 0.1), length=10.0):
    return ScoredWindow(song_id=song, start=start, length=length,
                        detect_prob=prob, type_probs=probs3)


class TestBuildEvents:
    def test_no_flags(self):
        assert build_events([]) == []

    def test_three_consecutive_merge(self):
        flagged = [window("a", s, 0.9) for s in (3.0, 4.0, 5.0)]
        events = build_events(flagged)
        assert len(events) == 1
        # union of center regions: [3 + 4, 5 + 6]
        assert events[0].start == pytest.approx(7.0)
        assert events[0].end == pytest.approx(11.0)

    def test_gap_splits(self):
        flagged = [window("a", 0.0, 0.9), window("a", 5.0, 0.8)]
        events = build_events(flagged)
        assert len(events) == 2

    def test_type_from_mean_probs(self):
        flagged = [
            window("a", 0.0, 0.9, probs3=(0.2, 0.5, 0.3)),
            window("a", 1.0, 0.9, probs3=(0.1, 0.6, 0.3)),
        ]
        events = build_events(flagged)
        assert events[0].type is ErrorType.RHYTHM
        assert events[0].detect_prob == pytest.approx(0.9)


def span(start, end, etype=ErrorType.FINE_PITCH):
    return ErrorSpan(start=start, end=end, type=etype)


def event(start, end, etype=ErrorType.FINE_PITCH):
    return PredictedEvent(song_id="a", start=start, end=end, type=etype, detect_prob=0.9)


def optimal_matching(events, spans):
    """Brute-force maximum-cardinality matching over overlap > 0 pairs."""
    n, m = len(events), len(spans)
    adj = [[events[i].overlap(spans[j]) > 0 for j in range(m)] for i in range(n)]
    best = 0

    def explore(i, used_mask, count):
        nonlocal best
        best = max(best, count)
        if i == n or count + (n - i) <= best:
            return
        explore(i + 1, used_mask, count)  # leave event i unmatched
        for j in range(m):
            if adj[i][j] and not used_mask >> j & 1:
                explore(i + 1, used_mask | (1 << j), count + 1)

    explore(0, 0, 0)
    return best


class TestMatchEvents:
    def test_identical_sets(self):
        truth = SongAnnotations(song_id="a", spans=(span(1, 2), span(5, 6)))
        events = [event(1, 2), event(5, 6)]
        matches, fps, fns = match_events(events, truth)
        assert len(matches) == 2 and not fps and not fns

    def test_disjoint_sets(self):
        truth = SongAnnotations(song_id="a", spans=(span(1, 2),))
        matches, fps, fns = match_events([event(5, 6)], truth)
        assert not matches and len(fps) == 1 and len(fns) == 1

    def test_one_to_one(self):
        truth = SongAnnotations(song_id="a", spans=(span(1, 4),))
        events = [event(1, 2), event(2, 3)]
        matches, fps, fns = match_events(events, truth)
        assert len(matches) == 1
        assert len(fps) == 1
        assert not fns

    def test_largest_overlap_preferred(self):
        truth = SongAnnotations(song_id="a", spans=(span(0, 10),))
        events = [event(9, 11), event(0, 8)]
        matches, _, _ = match_events(events, truth)
        assert matches[0][0].start == 0  # 8 s overlap beats 1 s

    def test_random_cases_against_bipartite_oracle(self):
        rng = np.random.default_rng(77)
        for _ in range(60):
            events = []
            for _ in range(int(rng.integers(0, 6))):
                s = float(rng.uniform(0, 30))
                events.append(event(s, s + float(rng.uniform(0.5, 6))))
            spans = []
            for _ in range(int(rng.integers(0, 6))):
                s = float(rng.uniform(0, 30))
                spans.append(span(s, s + float(rng.uniform(0.5, 6))))
            truth = SongAnnotations(song_id="a", spans=tuple(spans))
            matches, fps, fns = match_events(events, truth)
            assert len(matches) <= min(len(events), len(spans))
            assert len(matches) + len(fps) == len(events)
            assert len(matches) + len(fns) == len(truth.spans)
            assert len(matches) == optimal_matching(events, list(truth.spans))


class TestThresholdSearch:
    def test_perfect_separation_at_075(self):
        probs = np.array([0.1, 0.3, 0.55, 0.72, 0.78, 0.88, 0.95])
        labels = np.array([0, 0, 0, 0, 1, 1, 1])
        assert threshold_search(probs, labels) == pytest.approx(0.75)

    def test_monotone_returns_endpoint(self):
        probs = np.array([0.95, 0.96, 0.99])
        labels = np.array([1, 1, 1])
        assert threshold_search(probs, labels) == pytest.approx(0.90)

    def test_ties_pick_higher(self):
        probs = np.array([0.2, 0.95])
        labels = np.array([0, 1])
        # every grid threshold separates perfectly; conservative pick wins
        assert threshold_search(probs, labels) == pytest.approx(0.90)


class TestEvalReport:
    def _report(self):
        per_class, macro = per_class_metrics(CONFUSION, TRUTH_TOTALS)
        p, r, f1 = detection_prf(87, 250, 134)
        return EvalReport(
            threshold=0.75, tp=87, fp=250, fn=134,
            detection_precision=p, detection_recall=r, detection_f1=f1,
            per_class=per_class, type_macro_f1=macro, confusion=CONFUSION,
            truth_totals=list(TRUTH_TOTALS),
        )

    def test_json_round_trip(self):
        report = self._report()
        payload = json.loads(report.to_json())
        assert payload["tp"] == 87
        assert payload["type_macro_f1"] == pytest.approx(0.387, abs=0.0005)
        assert payload["confusion"] == CONFUSION

    def test_text_tables(self):
        text = self._report().format_tables()
        assert "89.5%" in text
        assert "0.387" in text
        assert "fine_pitch_error" in text
