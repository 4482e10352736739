"""Synthetic microtonal-singing generator with exact error injection.

Songs are beat-grid note sequences over a quarter-flat-second scale, rendered
as 5-partial harmonic tones (1/k amplitudes) with per-note vibrato and
envelope. Every note is synthesized from its own child seed, so injecting an
error re-renders only the altered notes and leaves all other samples
byte-identical. Injected spans are therefore exact ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import ErrorSpan, ErrorType, SongAnnotations, serialize_annotations
from .audio_io import CANONICAL_RATE, AudioClip, save_wav
from .errors import UnknownTypeError

ATTACK_S = 0.03
RELEASE_S = 0.06
N_PARTIALS = 5
BASE_AMP = 0.25
VIBRATO_RATE_HZ = 5.5


@dataclass(frozen=True)
class ScaleSpec:
    """Pitch material; defaults approximate a Bayati-on-D flavor with a
    quarter-flat second degree (an artifact test bed, not musicology)."""

    tonic_hz: float = 293.66
    degrees_cents: tuple[float, ...] = (0.0, 150.0, 300.0, 500.0, 700.0, 800.0, 1000.0)

    def __post_init__(self):
        object.__setattr__(self, "degrees_cents", tuple(self.degrees_cents))
        d = self.degrees_cents
        if any(b <= a for a, b in zip(d, d[1:])) or not (0 <= d[0] and d[-1] < 1200):
            raise ValueError("degree offsets must be strictly increasing within [0, 1200)")


@dataclass(frozen=True)
class Note:
    onset: float
    duration: float
    degree: int
    vibrato_cents: float

    @property
    def end(self) -> float:
        return self.onset + self.duration


@dataclass(frozen=True)
class SynthScore:
    notes: tuple[Note, ...]
    tempo: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "notes", tuple(self.notes))
        for a, b in zip(self.notes, self.notes[1:]):
            if b.onset < a.end - 1e-9:
                raise ValueError("notes must not overlap")

    @property
    def beat(self) -> float:
        return 60.0 / self.tempo


def _note_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _render_note(out: np.ndarray, scale: ScaleSpec, note: Note, index: int,
                 seed: int, detune_cents: float = 0.0,
                 onset_shift: float = 0.0, drift=None) -> None:
    """Additively render one note into `out`; all randomness from [seed, index]."""
    rng = _note_rng(seed, index)
    vib_phase = rng.uniform(0.0, 2.0 * np.pi)
    amp = BASE_AMP * (1.0 + 0.08 * rng.uniform(-1.0, 1.0))

    onset = note.onset + onset_shift
    duration = note.duration - onset_shift
    start = int(round(onset * CANONICAL_RATE))
    n = int(round(duration * CANONICAL_RATE))
    if n <= 0 or start >= len(out):
        return
    n = min(n, len(out) - start)
    t = np.arange(n) / CANONICAL_RATE

    cents = scale.degrees_cents[note.degree] + detune_cents
    cents = cents + note.vibrato_cents * np.sin(2.0 * np.pi * VIBRATO_RATE_HZ * t + vib_phase)
    if drift is not None:
        t0, t1, total = drift
        abs_t = onset + t
        cents = cents + total * np.clip((abs_t - t0) / max(t1 - t0, 1e-9), 0.0, 1.0)
    f0 = scale.tonic_hz * 2.0 ** (cents / 1200.0)
    phase = 2.0 * np.pi * np.cumsum(f0) / CANONICAL_RATE

    wave = np.zeros(n)
    for k in range(1, N_PARTIALS + 1):
        wave += np.sin(k * phase) / k

    env = np.ones(n)
    a = min(int(ATTACK_S * CANONICAL_RATE), n)
    r = min(int(RELEASE_S * CANONICAL_RATE), n)
    if a:
        env[:a] = np.linspace(0.0, 1.0, a, endpoint=False)
    if r:
        env[n - r :] = np.minimum(env[n - r :], np.linspace(1.0, 0.0, r))
    out[start : start + n] += amp * env * wave


def gen_score(scale: ScaleSpec, length_s: float, seed: int, tempo: float = 96.0) -> SynthScore:
    """Beat-grid degree walk anchored on the tonic every phrase."""
    rng = np.random.default_rng([seed, 0])
    beat = 60.0 / tempo
    notes = []
    degree = 0
    k = 0
    onset = 0.0
    while onset + beat <= length_s:
        if k % 8 == 0:
            degree = 0  # phrase anchor keeps the tonic dominant in the pitch mass
        else:
            step = int(rng.integers(-2, 3))
            degree = int(np.clip(degree + step, 0, len(scale.degrees_cents) - 1))
        vib = float(rng.uniform(4.0, 10.0))
        notes.append(Note(onset=onset, duration=0.9 * beat, degree=degree, vibrato_cents=vib))
        onset += beat
        k += 1
    return SynthScore(notes=tuple(notes), tempo=tempo, seed=seed)


def render_score(scale: ScaleSpec, score: SynthScore, length_s: float | None = None,
                 song_id: str = "", singer_id: str = "") -> AudioClip:
    if length_s is None:
        length_s = score.notes[-1].end if score.notes else 1.0
    out = np.zeros(int(round(length_s * CANONICAL_RATE)))
    for i, note in enumerate(score.notes):
        _render_note(out, scale, note, i, score.seed)
    return AudioClip(samples=out, sample_rate=CANONICAL_RATE,
                     song_id=song_id, singer_id=singer_id)


def gen_clean(scale: ScaleSpec, length_s: float, seed: int,
              song_id: str = "", singer_id: str = "") -> tuple[AudioClip, SynthScore]:
    """Deterministic clean song of roughly the requested length."""
    if length_s < 5.0:
        raise ValueError("synthetic songs need at least 5 seconds")
    score = gen_score(scale, length_s, seed)
    return render_score(scale, score, length_s, song_id, singer_id), score


def _erase(samples: np.ndarray, lo: float, hi: float) -> None:
    samples[int(round(lo * CANONICAL_RATE)) : int(round(hi * CANONICAL_RATE))] = 0.0


def inject_error(clip: AudioClip, score: SynthScore, error_type: ErrorType,
                 params: dict | None = None, seed: int = 0,
                 scale: ScaleSpec | None = None) -> tuple[AudioClip, ErrorSpan]:
    """Alter one region of the clip in place of its clean rendering.

    Only the altered notes' samples change; the returned span covers exactly
    the altered region. `params` may pin the note index and magnitudes, else
    they are drawn from `seed`.
    """
    params = dict(params or {})
    scale = scale or ScaleSpec()
    rng = np.random.default_rng([seed, 101])
    notes = score.notes
    if not notes:
        raise ValueError("score has no notes")
    samples = np.array(clip.samples, copy=True)

    if error_type == ErrorType.FINE_PITCH:
        idx = int(params.get("note", rng.integers(1, max(len(notes) - 1, 2))))
        cents = float(params.get("cents", rng.uniform(30.0, 70.0) * rng.choice([-1.0, 1.0])))
        note = notes[idx]
        _erase(samples, note.onset, note.end)
        _render_note(samples, scale, note, idx, score.seed, detune_cents=cents)
        span = ErrorSpan(start=note.onset, end=note.end, type=error_type,
                         detail=f"detuned {cents:+.0f} cents")
    elif error_type == ErrorType.RHYTHM:
        idx = int(params.get("note", rng.integers(1, max(len(notes) - 1, 2))))
        shift = float(params.get("shift", rng.uniform(0.25, 0.5) * score.beat))
        note = notes[idx]
        _erase(samples, note.onset, note.end)
        _render_note(samples, scale, note, idx, score.seed, onset_shift=shift)
        span = ErrorSpan(start=note.onset, end=note.end, type=error_type,
                         detail=f"onset late {shift * 1000:.0f} ms")
    elif error_type == ErrorType.MODAL_DRIFT:
        n_notes = int(params.get("n_notes", rng.integers(4, 7)))
        n_notes = min(n_notes, len(notes))
        first = int(params.get("note", rng.integers(0, max(len(notes) - n_notes, 1))))
        last = first + n_notes - 1
        total = float(params.get("cents", rng.uniform(40.0, 80.0) * rng.choice([-1.0, 1.0])))
        t0, t1 = notes[first].onset, notes[last].end
        _erase(samples, t0, t1)
        for i in range(first, last + 1):
            _render_note(samples, scale, notes[i], i, score.seed, drift=(t0, t1, total))
        span = ErrorSpan(start=t0, end=t1, type=error_type,
                         detail=f"tonic drifts {total:+.0f} cents")
    else:
        raise UnknownTypeError(f"cannot inject {error_type!r}")

    new_clip = AudioClip(samples=samples, sample_rate=clip.sample_rate,
                         song_id=clip.song_id, singer_id=clip.singer_id)
    return new_clip, span


def _plan_slots(score: SynthScore, error_types: list[ErrorType],
                rng: np.random.Generator) -> list[tuple[ErrorType, int, int]]:
    """(type, first_note, n_notes) slots, pairwise separated by >= 2 notes."""
    taken: list[tuple[int, int]] = []

    def free(first: int, count: int) -> bool:
        lo, hi = first - 2, first + count + 1
        return all(hi < a or lo > b for a, b in taken)

    slots = []
    n = len(score.notes)
    for etype in error_types:
        count = int(rng.integers(4, 7)) if etype == ErrorType.MODAL_DRIFT else 1
        placed = False
        for _ in range(300):
            first = int(rng.integers(1, max(n - count - 1, 2)))
            if free(first, count):
                taken.append((first, first + count - 1))
                slots.append((etype, first, count))
                placed = True
                break
        if not placed:
            for first in range(1, n - count - 1):
                if free(first, count):
                    taken.append((first, first + count - 1))
                    slots.append((etype, first, count))
                    placed = True
                    break
        if not placed:
            raise ValueError("song too short to place all requested errors")
    return slots


def gen_corpus(out_dir: str | Path, n_songs: int,
               counts: tuple[int, int, int], seed: int = 42,
               length_s: float = 60.0, n_singers: int = 5,
               scale: ScaleSpec | None = None) -> dict[str, SongAnnotations]:
    """Write a corpus directory (<root>/<singer>/<song>.wav + .json).

    `counts` are exact totals of (fine pitch, rhythm, modal drift) errors,
    dealt across songs as evenly as the shuffle allows.
    """
    out_dir = Path(out_dir)
    scale = scale or ScaleSpec()
    plan_rng = np.random.default_rng([seed, 7])
    type_list = (
        [ErrorType.FINE_PITCH] * counts[0]
        + [ErrorType.RHYTHM] * counts[1]
        + [ErrorType.MODAL_DRIFT] * counts[2]
    )
    plan_rng.shuffle(type_list)
    per_song: list[list[ErrorType]] = [[] for _ in range(n_songs)]
    for i, etype in enumerate(type_list):
        per_song[i % n_songs].append(etype)

    annotations: dict[str, SongAnnotations] = {}
    for i in range(n_songs):
        song_id = f"song{i:03d}"
        singer_id = f"singer{i % n_singers:02d}"
        clip, score = gen_clean(scale, length_s, seed=int(np.random.default_rng([seed, i]).integers(1 << 31)),
                                song_id=song_id, singer_id=singer_id)
        slot_rng = np.random.default_rng([seed, i, 3])
        spans = []
        for etype, first, count in _plan_slots(score, per_song[i], slot_rng):
            clip, span = inject_error(
                clip, score, etype,
                params={"note": first, "n_notes": count},
                seed=int(slot_rng.integers(1 << 31)),
                scale=scale,
            )
            spans.append(span)
        ann = SongAnnotations(song_id=song_id, spans=tuple(spans))
        annotations[song_id] = ann
        song_dir = out_dir / singer_id
        song_dir.mkdir(parents=True, exist_ok=True)
        save_wav(song_dir / f"{song_id}.wav", clip)
        (song_dir / f"{song_id}.json").write_text(serialize_annotations(ann))
    return annotations
