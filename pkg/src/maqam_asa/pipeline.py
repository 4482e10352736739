"""Corpus ingestion and window-feature assembly.

Corpus layout: <root>/<singer_id>/<song_id>.wav with a sibling
<song_id>.json annotation file. Full-song log-mel spectrograms are computed
once (float32) and sliced per window; tail windows are padded with the
song's silence-floor value.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import SongAnnotations, parse_annotations
from .audio_io import AudioClip, load_wav
from .dataset import WindowSample
from .errors import MissingAnnotationError
from .features import (
    HOP,
    FeatureStats,
    LogMelSpectrogram,
    compute_stats,
    log_mel,
    silence_floor_db,
)


@dataclass(frozen=True)
class CorpusSong:
    song_id: str
    singer_id: str
    path: Path
    duration: float
    annotations: SongAnnotations


def scan_corpus(root: str | Path) -> list[CorpusSong]:
    """Discover songs and their annotations; every WAV must have a JSON twin."""
    root = Path(root)
    songs = []
    for wav in sorted(root.glob("*/*.wav")):
        ann_path = wav.with_suffix(".json")
        if not ann_path.exists():
            raise MissingAnnotationError(f"no annotation file for {wav}")
        clip = load_wav(wav, song_id=wav.stem, singer_id=wav.parent.name)
        songs.append(
            CorpusSong(
                song_id=wav.stem,
                singer_id=wav.parent.name,
                path=wav,
                duration=clip.duration,
                annotations=parse_annotations(ann_path.read_text(), song_id=wav.stem),
            )
        )
    return songs


class FeatureStore:
    """Full-song spectrograms plus standardized window slices."""

    def __init__(self, clips: dict[str, AudioClip], stats: FeatureStats | None = None,
                 stats_songs: list[str] | None = None):
        self.sample_rate = next(iter(clips.values())).sample_rate if clips else 22050
        self._specs: dict[str, LogMelSpectrogram] = {}
        self._floors: dict[str, float] = {}
        self.durations: dict[str, float] = {}
        for song_id, clip in clips.items():
            spec = log_mel(clip)
            self._specs[song_id] = LogMelSpectrogram(
                values=spec.values.astype(np.float32),
                frame_hop=spec.frame_hop,
            )
            self._floors[song_id] = silence_floor_db(spec)
            self.durations[song_id] = clip.duration
        if stats is None:
            pool = stats_songs if stats_songs is not None else sorted(self._specs)
            stats = compute_stats([self._specs[s] for s in pool])
        self.stats = stats

    @classmethod
    def from_songs(cls, songs: list[CorpusSong], stats: FeatureStats | None = None,
                   stats_songs: list[str] | None = None) -> "FeatureStore":
        clips = {
            s.song_id: load_wav(s.path, song_id=s.song_id, singer_id=s.singer_id)
            for s in songs
        }
        return cls(clips, stats=stats, stats_songs=stats_songs)

    def n_frames(self, length_s: float) -> int:
        return 1 + int(round(length_s * self.sample_rate)) // HOP

    def song_frames(self, song_id: str) -> int:
        return self._specs[song_id].n_frames

    def window_values(self, sample: WindowSample) -> np.ndarray:
        """Standardized (n_mels, T) slice for one window, float32."""
        spec = self._specs[sample.song_id]
        n = self.n_frames(sample.length)
        start = int(round(sample.start * self.sample_rate / HOP))
        end = start + n
        values = spec.values[:, start : min(end, spec.n_frames)]
        if values.shape[1] < n:
            pad = np.full(
                (values.shape[0], n - values.shape[1]),
                self._floors[sample.song_id],
                dtype=values.dtype,
            )
            values = np.concatenate([values, pad], axis=1)
        return (values - self.stats.mean) / self.stats.std
