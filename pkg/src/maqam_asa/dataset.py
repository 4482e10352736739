"""Sliding-window dataset construction with center-overlap labeling.

A window is positive when some annotated span overlaps the central 20% of the
window by at least 30% of min(span duration, center duration). Splits are
assigned per song so no song contributes windows to two splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotations import ERROR_TYPES, ErrorType, SongAnnotations
from .errors import MissingAnnotationError, TooFewSongsError

#: Slack for float comparisons on second-valued boundaries (~1 ns).
_EPS = 1e-9

CENTER_FRACTION = 0.2
OVERLAP_FRACTION = 0.3

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class WindowSpec:
    length: float
    hop: float
    train_only: bool = False

    def __post_init__(self):
        if not (0 < self.hop <= self.length):
            raise ValueError(f"need 0 < hop <= length, got {self}")


LONG_WINDOWS = WindowSpec(length=10.0, hop=1.0)
SHORT_WINDOWS = WindowSpec(length=3.0, hop=0.5, train_only=True)
DEFAULT_SPECS = (LONG_WINDOWS, SHORT_WINDOWS)

DEFAULT_RATIOS = (0.88, 0.047, 0.074)


@dataclass(frozen=True)
class WindowSample:
    song_id: str
    start: float
    length: float
    detect_label: int  # 1 = error, 0 = clean
    type_label: ErrorType | None = None

    def __post_init__(self):
        if bool(self.detect_label) != (self.type_label is not None):
            raise ValueError("type_label must be present exactly when detect_label=1")


@dataclass(frozen=True)
class SplitAssignment:
    by_song: dict[str, str]
    seed: int

    def songs(self, split: str) -> list[str]:
        return sorted(s for s, sp in self.by_song.items() if sp == split)


def make_windows(duration: float, spec: WindowSpec) -> list[tuple[float, float]]:
    """Window (start, length) pairs; a too-short song yields one padded window."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if duration < spec.length:
        return [(0.0, spec.length)]
    n = int(np.floor((duration - spec.length) / spec.hop + _EPS)) + 1
    return [(i * spec.hop, spec.length) for i in range(n)]


def center_region(start: float, length: float) -> tuple[float, float]:
    half = (1.0 - CENTER_FRACTION) / 2.0
    return start + half * length, start + (half + CENTER_FRACTION) * length


def label_window(
    start: float, length: float, annotations: SongAnnotations
) -> tuple[int, ErrorType | None]:
    """Center-overlap rule; qualifying span with the largest overlap sets the type."""
    c_lo, c_hi = center_region(start, length)
    c_len = c_hi - c_lo
    best: tuple[float, float, ErrorType] | None = None
    for span in annotations.spans:
        ov = span.overlap(c_lo, c_hi)
        needed = OVERLAP_FRACTION * min(span.duration, c_len)
        if ov >= needed - _EPS and ov > 0:
            key = (ov, -span.start)
            if best is None or key > (best[0], -best[1]):
                best = (ov, span.start, span.type)
    if best is None:
        return 0, None
    return 1, best[2]


def split_by_song(
    song_masses,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 42,
) -> SplitAssignment:
    """Greedy assignment of shuffled songs to splits by remaining mass deficit.

    ``song_masses`` is a mapping song_id -> window mass, or an iterable of ids
    (equal mass). Each song lands in exactly one split.
    """
    if not isinstance(song_masses, dict):
        song_masses = {s: 1.0 for s in song_masses}
    if len(song_masses) < 3:
        raise TooFewSongsError(f"need at least 3 songs, got {len(song_masses)}")
    fractions = np.asarray(ratios, dtype=np.float64)
    fractions = fractions / fractions.sum()
    total = float(sum(song_masses.values()))
    targets = fractions * total

    rng = np.random.default_rng(seed)
    order = list(rng.permutation(sorted(song_masses)))
    filled = np.zeros(3)
    by_song = {}
    for song in order:
        deficits = targets - filled
        k = int(np.argmax(deficits))
        by_song[song] = SPLITS[k]
        filled[k] += song_masses[song]
    return SplitAssignment(by_song=by_song, seed=seed)


def build_dataset(
    durations: dict[str, float],
    annotations: dict[str, SongAnnotations],
    specs: tuple[WindowSpec, ...] = DEFAULT_SPECS,
    split: SplitAssignment | None = None,
) -> dict[str, list[WindowSample]]:
    """Labeled windows per split; short (train_only) specs skip non-train songs."""
    missing = sorted(set(durations) - set(annotations))
    if missing:
        raise MissingAnnotationError(f"songs without annotations: {missing}")
    if split is None:
        split = SplitAssignment(by_song={s: "train" for s in durations}, seed=0)
    out: dict[str, list[WindowSample]] = {s: [] for s in SPLITS}
    for song_id in sorted(durations):
        song_split = split.by_song.get(song_id, "train")
        for spec in specs:
            if spec.train_only and song_split != "train":
                continue
            for start, length in make_windows(durations[song_id], spec):
                detect, etype = label_window(start, length, annotations[song_id])
                out[song_split].append(
                    WindowSample(song_id, start, length, detect, etype)
                )
    return out


def window_counts(windows: dict[str, list[WindowSample]]) -> dict[str, dict[str, int]]:
    """Per-split totals: windows, error windows, and per-type error windows."""
    summary = {}
    for split_name, samples in windows.items():
        row = {"windows": len(samples), "errors": 0}
        for t in ERROR_TYPES:
            row[t.value] = 0
        for s in samples:
            if s.detect_label:
                row["errors"] += 1
                row[s.type_label.value] += 1
        summary[split_name] = row
    return summary


def save_manifest(path: str | Path, windows: dict[str, list[WindowSample]],
                  split: SplitAssignment | None = None) -> None:
    payload = {
        "splits": {
            name: [
                {
                    "song_id": s.song_id,
                    "start": s.start,
                    "length": s.length,
                    "detect_label": s.detect_label,
                    "type_label": None if s.type_label is None else s.type_label.value,
                }
                for s in samples
            ]
            for name, samples in windows.items()
        },
        "summary": window_counts(windows),
    }
    if split is not None:
        payload["split_by_song"] = split.by_song
        payload["seed"] = split.seed
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_manifest(path: str | Path) -> dict[str, list[WindowSample]]:
    payload = json.loads(Path(path).read_text())
    out = {}
    for name, rows in payload["splits"].items():
        out[name] = [
            WindowSample(
                song_id=r["song_id"],
                start=r["start"],
                length=r["length"],
                detect_label=r["detect_label"],
                type_label=None if r["type_label"] is None else ErrorType(r["type_label"]),
            )
            for r in rows
        ]
    return out
