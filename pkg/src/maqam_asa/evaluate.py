"""Thresholding, event construction/matching, and the published metrics.

Window scores become events by merging consecutive flagged windows (gap of at
most one hop) over the union of their center regions. Events match ground
truth greedily by descending temporal overlap, one truth span per prediction.
Per-class precision is diagonal/row-sum on the matched-detection confusion
matrix; recall is diagonal/truth-total.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .annotations import ERROR_TYPES, ErrorSpan, ErrorType, SongAnnotations
from .dataset import LONG_WINDOWS, WindowSample, WindowSpec, center_region, make_windows


@dataclass(frozen=True)
class ScoredWindow:
    song_id: str
    start: float
    length: float
    detect_prob: float
    type_probs: tuple[float, float, float]


@dataclass(frozen=True)
class PredictedEvent:
    song_id: str
    start: float
    end: float
    type: ErrorType
    detect_prob: float  # mean over merged windows

    def overlap(self, span: ErrorSpan) -> float:
        return max(0.0, min(self.end, span.end) - max(self.start, span.start))


@dataclass
class EvalReport:
    threshold: float
    tp: int
    fp: int
    fn: int
    detection_precision: float
    detection_recall: float
    detection_f1: float
    per_class: dict[str, dict[str, float]]
    type_macro_f1: float
    confusion: list[list[int]]
    truth_totals: list[int]

    def to_json(self) -> str:
        payload = {
            "threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "detection_precision": round(self.detection_precision, 6),
            "detection_recall": round(self.detection_recall, 6),
            "detection_f1": round(self.detection_f1, 6),
            "per_class": {
                k: {m: round(v, 6) for m, v in row.items()}
                for k, row in self.per_class.items()
            },
            "type_macro_f1": round(self.type_macro_f1, 6),
            "confusion": self.confusion,
            "truth_totals": self.truth_totals,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def format_tables(self) -> str:
        lines = [
            "Evaluation results",
            f"  Detection threshold   {self.threshold:.3f}",
            f"  Detection recall      {100 * self.detection_recall:.1f}%",
            f"  Detection precision   {100 * self.detection_precision:.1f}%",
            f"  Detection F1          {self.detection_f1:.3f}",
            f"  Type macro-F1         {self.type_macro_f1:.3f}",
            "",
            "Per-class performance",
            f"  {'Error type':<20} {'Detected':>8} {'Precision':>10} {'Recall':>8} {'F1':>7}",
        ]
        for t in ERROR_TYPES:
            row = self.per_class[t.value]
            lines.append(
                f"  {t.value:<20} {int(row['detected']):>8} "
                f"{100 * row['precision']:>9.1f}% {100 * row['recall']:>7.1f}% "
                f"{row['f1']:>7.3f}"
            )
        lines.append("")
        lines.append("Confusion matrix (rows = truth, columns = predicted)")
        for t, row in zip(ERROR_TYPES, self.confusion):
            cells = " ".join(f"{v:>5d}" for v in row)
            lines.append(f"  {t.value:<20} {cells}")
        return "\n".join(lines)


# ------------------------------------------------------------------- scoring

def score_song(net, params, features, song_id: str,
               window_spec: WindowSpec = LONG_WINDOWS,
               batch_size: int = 32) -> list[ScoredWindow]:
    """Eval-mode scores for every window of one song."""
    duration = features.durations[song_id]
    windows = make_windows(duration, window_spec)
    scored = []
    for lo in range(0, len(windows), batch_size):
        chunk = windows[lo : lo + batch_size]
        mats = [
            features.window_values(WindowSample(song_id, start, length, 0, None))
            for start, length in chunk
        ]
        out = net.forward(params, np.stack(mats)[:, None, :, :], train=False)
        for (start, length), p, tp in zip(chunk, out.detect_prob, out.type_probs):
            scored.append(
                ScoredWindow(song_id, start, length, float(p),
                             tuple(float(v) for v in tp))
            )
    return scored


def flag_windows(scored: list[ScoredWindow], threshold: float) -> list[ScoredWindow]:
    return [w for w in scored if w.detect_prob >= threshold]


def predict_song(net, params, features, song_id: str, threshold: float,
                 window_spec: WindowSpec = LONG_WINDOWS) -> list[ScoredWindow]:
    return flag_windows(score_song(net, params, features, song_id, window_spec), threshold)


# -------------------------------------------------------------------- events

def build_events(flagged: list[ScoredWindow],
                 hop: float = LONG_WINDOWS.hop) -> list[PredictedEvent]:
    """Merge runs of flagged windows (gap <= hop) over their center regions."""
    events = []
    flagged = sorted(flagged, key=lambda w: w.start)
    i = 0
    while i < len(flagged):
        j = i
        while j + 1 < len(flagged) and flagged[j + 1].start - flagged[j].start <= hop + 1e-9:
            j += 1
        run = flagged[i : j + 1]
        lo, _ = center_region(run[0].start, run[0].length)
        _, hi = center_region(run[-1].start, run[-1].length)
        mean_type = np.mean([w.type_probs for w in run], axis=0)
        events.append(
            PredictedEvent(
                song_id=run[0].song_id,
                start=lo,
                end=hi,
                type=ERROR_TYPES[int(np.argmax(mean_type))],
                detect_prob=float(np.mean([w.detect_prob for w in run])),
            )
        )
        i = j + 1
    return events


def match_events(predicted: list[PredictedEvent], truth: SongAnnotations):
    """Greedy one-to-one matching by descending overlap (> 0 required).

    Returns (matches, unmatched_predictions, unmatched_truths) where matches
    are (event, span) pairs.
    """
    pairs = []
    for pi, event in enumerate(predicted):
        for ti, span in enumerate(truth.spans):
            ov = event.overlap(span)
            if ov > 0:
                pairs.append((ov, pi, ti))
    pairs.sort(key=lambda x: (-x[0], x[1], x[2]))
    used_p: set[int] = set()
    used_t: set[int] = set()
    matches = []
    for ov, pi, ti in pairs:
        if pi in used_p or ti in used_t:
            continue
        used_p.add(pi)
        used_t.add(ti)
        matches.append((predicted[pi], truth.spans[ti]))
    fps = [e for i, e in enumerate(predicted) if i not in used_p]
    fns = [s for i, s in enumerate(truth.spans) if i not in used_t]
    return matches, fps, fns


# ------------------------------------------------------------------- metrics

def detection_prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def per_class_metrics(confusion, truth_totals) -> tuple[dict[str, dict[str, float]], float]:
    """Row-based per-class metrics from a matched-detection confusion matrix.

    detected = row sum, precision = diagonal/detected,
    recall = diagonal/truth_total, macro-F1 = unweighted mean of class F1.
    """
    confusion = np.asarray(confusion)
    truth_totals = np.asarray(truth_totals, dtype=np.float64)
    per_class = {}
    f1s = []
    for k, t in enumerate(ERROR_TYPES):
        detected = float(confusion[k].sum())
        correct = float(confusion[k, k])
        precision = correct / detected if detected else 0.0
        recall = correct / truth_totals[k] if truth_totals[k] else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[t.value] = {
            "detected": detected,
            "precision": precision,
            "recall": recall,
            "f1": f1,
        }
        f1s.append(f1)
    return per_class, float(np.mean(f1s))


def threshold_search(probs, labels, lo: float = 0.30, hi: float = 0.90,
                     step: float = 0.05) -> float:
    """Threshold maximizing window-level detection F1; ties pick the higher
    (more conservative) threshold."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    best_t, best_f1 = lo, -1.0
    n_steps = int(round((hi - lo) / step))
    for i in range(n_steps + 1):
        t = lo + i * step
        flag = probs >= t - 1e-12
        tp = int(np.sum(flag & (labels == 1)))
        fp = int(np.sum(flag & (labels == 0)))
        fn = int(np.sum(~flag & (labels == 1)))
        _, _, f1 = detection_prf(tp, fp, fn)
        if f1 >= best_f1 - 1e-12:
            best_t, best_f1 = t, max(f1, best_f1)
    return round(best_t, 10)


def search_threshold_for_model(net, params, features,
                               windows: list[WindowSample], **kwargs) -> float:
    """Score labeled validation windows with the model, then sweep."""
    probs = []
    by_len: dict[int, list[WindowSample]] = {}
    for s in windows:
        by_len.setdefault(features.n_frames(s.length), []).append(s)
    labels = []
    for _, group in sorted(by_len.items()):
        for lo in range(0, len(group), 32):
            chunk = group[lo : lo + 32]
            mats = [features.window_values(s) for s in chunk]
            out = net.forward(params, np.stack(mats)[:, None, :, :], train=False)
            probs.extend(out.detect_prob.tolist())
            labels.extend(s.detect_label for s in chunk)
    return threshold_search(np.array(probs), np.array(labels), **kwargs)


def evaluate_corpus(net, params, features, truths: dict[str, SongAnnotations],
                    threshold: float) -> EvalReport:
    """Full event-level evaluation over every song in `truths`."""
    tp = fp = fn = 0
    confusion = np.zeros((3, 3), dtype=int)
    truth_totals = np.zeros(3, dtype=int)
    type_idx = {t: i for i, t in enumerate(ERROR_TYPES)}
    for song_id in sorted(truths):
        truth = truths[song_id]
        for span in truth.spans:
            truth_totals[type_idx[span.type]] += 1
        flagged = predict_song(net, params, features, song_id, threshold)
        events = build_events(flagged)
        matches, fps, fns = match_events(events, truth)
        tp += len(matches)
        fp += len(fps)
        fn += len(fns)
        for event, span in matches:
            confusion[type_idx[span.type], type_idx[event.type]] += 1
    precision, recall, f1 = detection_prf(tp, fp, fn)
    per_class, macro = per_class_metrics(confusion, truth_totals)
    return EvalReport(
        threshold=threshold,
        tp=tp,
        fp=fp,
        fn=fn,
        detection_precision=precision,
        detection_recall=recall,
        detection_f1=f1,
        per_class=per_class,
        type_macro_f1=macro,
        confusion=confusion.tolist(),
        truth_totals=truth_totals.tolist(),
    )
