"""Error-span taxonomy, validation, and JSON (de)serialization.

The wire format is a JSON array of objects with keys ``start``, ``end``,
``type`` and optional ``detail``; times are decimal seconds at millisecond
resolution. Unknown keys are preserved through a parse/serialize round trip.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import InvertedSpanError, MalformedJsonError, UnknownTypeError


class ErrorType(str, Enum):
    FINE_PITCH = "fine_pitch_error"
    RHYTHM = "rhythm_error"
    MODAL_DRIFT = "modal_drift_error"

    @classmethod
    def from_wire(cls, value: str) -> "ErrorType":
        try:
            return cls(value)
        except ValueError:
            raise UnknownTypeError(f"unknown error type {value!r}") from None


#: Canonical class order used for labels, loss weights, and confusion matrices.
ERROR_TYPES = (ErrorType.FINE_PITCH, ErrorType.RHYTHM, ErrorType.MODAL_DRIFT)


@dataclass(frozen=True)
class ErrorSpan:
    """One annotated error region within a song."""

    start: float
    end: float
    type: ErrorType
    detail: str | None = None
    review_level: int | None = None
    extras: tuple[tuple[str, object], ...] = ()

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise InvertedSpanError("span times must be finite")
        if self.start < 0 or self.start >= self.end:
            raise InvertedSpanError(
                f"invalid span ({self.start}, {self.end}): need 0 <= start < end"
            )
        if self.review_level is not None and self.review_level not in (1, 2, 3):
            raise MalformedJsonError("review_level must be 1, 2, or 3")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def overlap(self, lo: float, hi: float) -> float:
        """Length of intersection with [lo, hi], in seconds."""
        return max(0.0, min(self.end, hi) - max(self.start, lo))


@dataclass(frozen=True)
class SongAnnotations:
    """All spans for one song, kept sorted by start time."""

    song_id: str
    spans: tuple[ErrorSpan, ...] = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.spans, key=lambda s: (s.start, s.end)))
        object.__setattr__(self, "spans", ordered)

    def __len__(self) -> int:
        return len(self.spans)


_KNOWN_KEYS = ("start", "end", "type", "detail", "review_level")


def parse_annotations(text: str | bytes, song_id: str = "") -> SongAnnotations:
    """Parse the JSON export format into validated spans.

    Raises MalformedJsonError for structural problems, UnknownTypeError for a
    type outside the taxonomy, and InvertedSpanError for start >= end.
    """
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedJsonError(f"annotation payload is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise MalformedJsonError("annotation payload must be a JSON array")

    spans = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise MalformedJsonError(f"annotation {i} is not an object")
        try:
            start = float(item["start"])
            end = float(item["end"])
            wire_type = item["type"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedJsonError(f"annotation {i} is missing start/end/type") from exc
        extras = tuple((k, v) for k, v in item.items() if k not in _KNOWN_KEYS)
        spans.append(
            ErrorSpan(
                start=start,
                end=end,
                type=ErrorType.from_wire(wire_type),
                detail=item.get("detail"),
                review_level=item.get("review_level"),
                extras=extras,
            )
        )
    return SongAnnotations(song_id=song_id, spans=tuple(spans))


def _format_seconds(value: float) -> str:
    """Decimal seconds with at least millisecond resolution, losslessly."""
    fixed = f"{value:.3f}"
    return fixed if float(fixed) == value else repr(value)


def serialize_annotations(annotations: SongAnnotations) -> str:
    """Emit the export format; byte-stable for identical inputs."""
    if not annotations.spans:
        return "[]"
    chunks = []
    for span in annotations.spans:
        lines = [
            f'    "start": {_format_seconds(span.start)}',
            f'    "end": {_format_seconds(span.end)}',
            f'    "type": {json.dumps(span.type.value)}',
        ]
        if span.detail is not None:
            lines.append(f'    "detail": {json.dumps(span.detail, ensure_ascii=False)}')
        if span.review_level is not None:
            lines.append(f'    "review_level": {span.review_level}')
        for key, value in span.extras:
            lines.append(f"    {json.dumps(key)}: {json.dumps(value, ensure_ascii=False)}")
        chunks.append("  {\n" + ",\n".join(lines) + "\n  }")
    return "[\n" + ",\n".join(chunks) + "\n]"


@dataclass(frozen=True)
class CorpusStats:
    counts: dict[str, int]
    percentages: dict[str, float]
    total: int
    songs_with_type: dict[str, int]
    per_song: dict[str, int]


def corpus_stats(annotation_sets: list[SongAnnotations]) -> CorpusStats:
    """Counts per error type, percentages (one decimal), and song coverage."""
    counts = {t.value: 0 for t in ERROR_TYPES}
    songs_with = {t.value: 0 for t in ERROR_TYPES}
    per_song: dict[str, int] = {}
    for ann in annotation_sets:
        per_song[ann.song_id] = len(ann.spans)
        present = set()
        for span in ann.spans:
            counts[span.type.value] += 1
            present.add(span.type.value)
        for t in present:
            songs_with[t] += 1
    total = sum(counts.values())
    percentages = {
        t: round(100.0 * n / total, 1) if total else 0.0 for t, n in counts.items()
    }
    return CorpusStats(
        counts=counts,
        percentages=percentages,
        total=total,
        songs_with_type=songs_with,
        per_song=per_song,
    )
