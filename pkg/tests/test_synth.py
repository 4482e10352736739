import json

import numpy as np
import pytest

from maqam_asa.annotations import ErrorType, corpus_stats, parse_annotations
from maqam_asa.audio_io import CANONICAL_RATE, load_wav
from maqam_asa.dataset import label_window
from maqam_asa.errors import UnknownTypeError
from maqam_asa.pitch import track_f0
from maqam_asa.synth import ScaleSpec, SynthScore, gen_clean, gen_corpus, inject_error

from conftest import cents_between

SCALE = ScaleSpec()


def median_f0(clip, lo, hi):
    track = track_f0(clip)
    values = [f.f0 for f in track.frames if f.f0 and lo <= f.time < hi]
    return float(np.median(values)) if values else None


class TestGenClean:
    def test_deterministic(self):
        a, score_a = gen_clean(SCALE, 12.0, seed=5)
        b, score_b = gen_clean(SCALE, 12.0, seed=5)
        assert np.array_equal(a.samples, b.samples)
        assert score_a == score_b

    def test_different_seeds_differ(self):
        a, _ = gen_clean(SCALE, 12.0, seed=5)
        b, _ = gen_clean(SCALE, 12.0, seed=6)
        assert not np.array_equal(a.samples, b.samples)

    def test_duration(self):
        clip, score = gen_clean(SCALE, 20.0, seed=1)
        assert abs(clip.duration - 20.0) <= score.beat + 1e-6

    def test_notes_track_scale_degrees(self):
        clip, score = gen_clean(SCALE, 15.0, seed=2)
        checked = 0
        for note in score.notes[2:14]:
            target = SCALE.tonic_hz * 2 ** (SCALE.degrees_cents[note.degree] / 1200)
            got = median_f0(clip, note.onset + 0.1, note.end - 0.1)
            if got is None:
                continue
            assert cents_between(got, target) < 10
            checked += 1
        assert checked >= 8

    def test_amplitude_bounded(self):
        clip, _ = gen_clean(SCALE, 10.0, seed=3)
        assert np.max(np.abs(clip.samples)) <= 1.0

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            gen_clean(SCALE, 2.0, seed=0)


class TestInjectError:
    def setup_method(self):
        self.clip, self.score = gen_clean(SCALE, 20.0, seed=9)

    def test_fine_pitch_detunes_by_requested_cents(self):
        idx, cents = 6, 50.0
        injected, span = inject_error(
            self.clip, self.score, ErrorType.FINE_PITCH,
            params={"note": idx, "cents": cents}, seed=1,
        )
        note = self.score.notes[idx]
        assert span.start == note.onset and span.end == note.end
        clean_f0 = median_f0(self.clip, note.onset + 0.1, note.end - 0.1)
        new_f0 = median_f0(injected, note.onset + 0.1, note.end - 0.1)
        shift = 1200 * np.log2(new_f0 / clean_f0)
        assert abs(shift - cents) < 10

    def test_only_altered_region_changes(self):
        injected, span = inject_error(
            self.clip, self.score, ErrorType.FINE_PITCH,
            params={"note": 4}, seed=2,
        )
        lo = int(span.start * CANONICAL_RATE)
        hi = int(round(span.end * CANONICAL_RATE))
        assert np.array_equal(injected.samples[:lo], self.clip.samples[:lo])
        assert np.array_equal(injected.samples[hi + 1 :], self.clip.samples[hi + 1 :])
        assert not np.array_equal(injected.samples[lo:hi], self.clip.samples[lo:hi])

    def test_rhythm_displaces_onset(self):
        idx = 8
        note = self.score.notes[idx]
        shift = 0.4 * self.score.beat
        injected, span = inject_error(
            self.clip, self.score, ErrorType.RHYTHM,
            params={"note": idx, "shift": shift}, seed=3,
        )
        assert span.start == note.onset

        def onset_time(clip):
            seg = clip.samples[
                int((note.onset - 0.05) * CANONICAL_RATE) : int(note.end * CANONICAL_RATE)
            ]
            env = np.abs(seg)
            k = 256
            smooth = np.convolve(env, np.ones(k) / k, mode="same")
            above = smooth > 0.25 * smooth.max()
            return note.onset - 0.05 + np.argmax(above) / CANONICAL_RATE

        displacement = onset_time(injected) - onset_time(self.clip)
        assert abs(displacement - shift) < 0.02

    def test_modal_drift_glides(self):
        first, count = 5, 5
        injected, span = inject_error(
            self.clip, self.score, ErrorType.MODAL_DRIFT,
            params={"note": first, "n_notes": count, "cents": 60.0}, seed=4,
        )
        notes = self.score.notes
        assert span.start == notes[first].onset
        assert span.end == notes[first + count - 1].end
        # late notes in the region are displaced more than early ones
        early = notes[first]
        late = notes[first + count - 1]
        early_shift = 1200 * np.log2(
            median_f0(injected, early.onset + 0.1, early.end - 0.1)
            / median_f0(self.clip, early.onset + 0.1, early.end - 0.1)
        )
        late_shift = 1200 * np.log2(
            median_f0(injected, late.onset + 0.1, late.end - 0.1)
            / median_f0(self.clip, late.onset + 0.1, late.end - 0.1)
        )
        assert late_shift > early_shift + 20
        assert late_shift <= 62

    def test_accumulating_injections(self):
        clip = self.clip
        spans = []
        for etype, idx in [(ErrorType.FINE_PITCH, 3), (ErrorType.RHYTHM, 10),
                           (ErrorType.FINE_PITCH, 15)]:
            clip, span = inject_error(clip, self.score, etype,
                                      params={"note": idx}, seed=idx)
            spans.append(span)
        assert len(spans) == 3
        assert [s.type for s in spans] == [ErrorType.FINE_PITCH, ErrorType.RHYTHM,
                                           ErrorType.FINE_PITCH]

    def test_unknown_type(self):
        with pytest.raises(UnknownTypeError):
            inject_error(self.clip, self.score, "vibrato_error", seed=0)


class TestGenCorpus:
    def test_exact_counts_and_layout(self, tmp_path):
        annotations = gen_corpus(tmp_path, n_songs=4, counts=(6, 2, 1),
                                 seed=7, length_s=12.0, n_singers=2)
        stats = corpus_stats(list(annotations.values()))
        assert stats.counts == {
            "fine_pitch_error": 6,
            "rhythm_error": 2,
            "modal_drift_error": 1,
        }
        wavs = sorted(tmp_path.glob("*/*.wav"))
        assert len(wavs) == 4
        for wav in wavs:
            assert wav.with_suffix(".json").exists()
            reparsed = parse_annotations(wav.with_suffix(".json").read_text(),
                                         song_id=wav.stem)
            assert reparsed.spans == annotations[wav.stem].spans

    def test_deterministic_bytes(self, tmp_path):
        gen_corpus(tmp_path / "a", 2, (2, 1, 1), seed=5, length_s=12.0)
        gen_corpus(tmp_path / "b", 2, (2, 1, 1), seed=5, length_s=12.0)
        for left in sorted((tmp_path / "a").glob("*/*")):
            right = tmp_path / "b" / left.relative_to(tmp_path / "a")
            assert left.read_bytes() == right.read_bytes()

    def test_all_clean_corpus(self, tmp_path):
        annotations = gen_corpus(tmp_path, 2, (0, 0, 0), seed=3, length_s=10.0)
        assert all(len(a) == 0 for a in annotations.values())

    def test_injected_spans_label_positive_windows(self, tmp_path):
        annotations = gen_corpus(tmp_path, 2, (4, 2, 0), seed=11, length_s=15.0)
        hits = 0
        for ann in annotations.values():
            for span in ann.spans:
                # a window centered on the span must label as its type
                mid = (span.start + span.end) / 2
                start = max(0.0, mid - 1.5)
                detect, etype = label_window(start, 3.0, ann)
                if detect:
                    hits += 1
                    assert etype == span.type
        assert hits >= 5  # nearly every injected span is reachable

    def test_loadable_audio(self, tmp_path):
        gen_corpus(tmp_path, 1, (1, 0, 0), seed=2, length_s=10.0)
        wav = next(tmp_path.glob("*/*.wav"))
        clip = load_wav(wav)
        assert clip.sample_rate == CANONICAL_RATE
        assert clip.duration == pytest.approx(10.0, abs=0.7)
