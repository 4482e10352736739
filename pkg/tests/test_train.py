import json
import zlib

import numpy as np
import pytest

from maqam_asa.annotations import ErrorType
from maqam_asa.dataset import WindowSample
from maqam_asa.errors import EmptyDatasetError
from maqam_asa.features import FeatureStats
from maqam_asa.model import ModelConfig, TwoHeadCRNN, load_checkpoint
from maqam_asa.train import (
    AdamW,
    EarlyStopper,
    PlateauScheduler,
    TrainConfig,
    Trainer,
    fit,
)

# Validation macro-F1 by epoch from the recorded 20-epoch training run.
RECORDED_VAL_MACRO_F1 = [
    0.246, 0.215, 0.270, 0.158, 0.397, 0.300, 0.384, 0.346, 0.411, 0.468,
    0.297, 0.256, 0.368, 0.287, 0.347, 0.348, 0.412, 0.355, 0.299, 0.352,
]


class TestAdamW:
    def test_zero_grad_no_decay(self):
        params = {"w": np.array([1.0, -2.0])}
        opt = AdamW(lr=0.1, weight_decay=0.0)
        opt.step(params, {"w": np.zeros(2)})
        assert np.array_equal(params["w"], [1.0, -2.0])

    def test_zero_grad_pure_decay(self):
        params = {"w": np.array([1.0, -2.0])}
        opt = AdamW(lr=0.1, weight_decay=0.5)
        opt.step(params, {"w": np.zeros(2)})
        assert np.allclose(params["w"], np.array([1.0, -2.0]) * (1 - 0.1 * 0.5))

    def test_quadratic_convergence(self):
        # minimize (w - 3)^2; optimum w = 3
        params = {"w": np.array([0.0])}
        opt = AdamW(lr=0.1, weight_decay=0.0)
        for _ in range(200):
            grad = 2.0 * (params["w"] - 3.0)
            opt.step(params, {"w": grad})
        assert abs(params["w"][0] - 3.0) < 1e-3

    def test_non_finite_rejected(self):
        from maqam_asa.errors import NonFiniteError

        opt = AdamW(lr=0.1)
        with pytest.raises(NonFiniteError):
            opt.step({"w": np.array([1.0])}, {"w": np.array([np.nan])})


class TestPlateauScheduler:
    def test_improving_unchanged(self):
        sched = PlateauScheduler(3e-4)
        for v in (0.1, 0.2, 0.3, 0.4, 0.5):
            lr = sched.update(v)
        assert lr == 3e-4

    def test_flat_four_epochs_one_halving(self):
        sched = PlateauScheduler(3e-4)
        for _ in range(4):
            lr = sched.update(0.5)
        assert lr == pytest.approx(1.5e-4)

    def test_floor(self):
        sched = PlateauScheduler(4e-6, min_lr=1e-6)
        for _ in range(30):
            lr = sched.update(0.5)
        assert lr >= 1e-6
        assert lr == pytest.approx(1e-6)


class TestEarlyStopper:
    def test_recorded_curve_selects_epoch_10(self):
        stopper = EarlyStopper(patience=10)
        stopped_at = None
        for epoch, value in enumerate(RECORDED_VAL_MACRO_F1, start=1):
            if stopper.update(epoch, value):
                stopped_at = epoch
                break
        assert stopper.best_epoch == 10
        assert stopper.best == pytest.approx(0.468)
        assert stopped_at is not None and stopped_at <= 20

    def test_constant_metric_stops_at_patience_plus_one(self):
        stopper = EarlyStopper(patience=3)
        stopped_at = None
        for epoch in range(1, 50):
            if stopper.update(epoch, 0.25):
                stopped_at = epoch
                break
        assert stopped_at == 4

    def test_never_selects_worse_epoch(self):
        stopper = EarlyStopper(patience=100)
        values = [0.1, 0.5, 0.3, 0.4, 0.2]
        for epoch, v in enumerate(values, start=1):
            stopper.update(epoch, v)
        assert stopper.best_epoch == 2
        assert stopper.best == max(values)


class StubStore:
    """Deterministic pseudo-spectrogram source with a learnable error cue."""

    sample_rate = 22050
    stats = FeatureStats(mean=0.0, std=1.0)

    def n_frames(self, length_s):
        return 1 + int(round(length_s * self.sample_rate)) // 512

    def window_values(self, sample):
        key = [zlib.crc32(sample.song_id.encode()), int(sample.start * 1000)]
        rng = np.random.default_rng(key)
        values = 0.3 * rng.standard_normal((128, self.n_frames(sample.length)))
        if sample.detect_label:
            band = {ErrorType.FINE_PITCH: 30, ErrorType.RHYTHM: 60,
                    ErrorType.MODAL_DRIFT: 90}[sample.type_label]
            values[band : band + 12] += 2.0
        return values.astype(np.float32)


SMALL_MODEL = ModelConfig(
    n_mels=128, conv_channels=(4, 8, 8), conv_dropout=0.1,
    lstm_input_dim=32, lstm_hidden=16, lstm_layers=1,
    attn_hidden=16, attn_dropout=0.1, head_dropout=0.1, type_hidden=16,
)


def stub_windows(song_ids, n_per_song=24, error_every=4):
    types = [ErrorType.FINE_PITCH, ErrorType.FINE_PITCH, ErrorType.RHYTHM,
             ErrorType.MODAL_DRIFT]
    windows = []
    for sid in song_ids:
        for i in range(n_per_song):
            is_err = i % error_every == 0
            windows.append(
                WindowSample(
                    song_id=sid, start=float(i), length=3.0,
                    detect_label=int(is_err),
                    type_label=types[(i // error_every) % len(types)] if is_err else None,
                )
            )
    return windows


def quick_config(**overrides):
    base = dict(
        lr=3e-3, weight_decay=1e-4, batch_size=8, max_epochs=3,
        early_stop_patience=10, seed=42, checkpoint_every=2,
        use_spec_augment=False, hard_negative_fraction=0.25,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestFit:
    def test_deterministic_and_learns(self, tmp_path):
        store = StubStore()
        train = stub_windows(["a", "b", "c"])
        val = stub_windows(["d"])
        r1 = fit(store, train, val, SMALL_MODEL, quick_config(), tmp_path / "run1")
        r2 = fit(store, train, val, SMALL_MODEL, quick_config(), tmp_path / "run2")
        assert [e.detect_loss for e in r1.epochs] == [e.detect_loss for e in r2.epochs]
        assert [e.type_loss for e in r1.epochs] == [e.type_loss for e in r2.epochs]
        assert [e.val_macro_f1 for e in r1.epochs] == [e.val_macro_f1 for e in r2.epochs]
        assert r1.best_epoch == r2.best_epoch
        # the stub cue is trivially learnable: detection loss halves
        assert r1.epochs[-1].detect_loss <= 0.5 * r1.epochs[0].detect_loss
        assert (tmp_path / "run1" / "best.ckpt").exists()
        assert (tmp_path / "run1" / "epoch002.ckpt").exists()
        assert (tmp_path / "run1" / "train_report.jsonl").exists()

    def test_report_jsonl_shape(self, tmp_path):
        store = StubStore()
        report = fit(store, stub_windows(["a"]), stub_windows(["b"]),
                     SMALL_MODEL, quick_config(max_epochs=2), tmp_path)
        lines = (tmp_path / "train_report.jsonl").read_text().strip().split("\n")
        assert len(lines) == len(report.epochs) + 1
        first = json.loads(lines[0])
        assert {"epoch", "detect_loss", "type_loss", "val_detect_f1",
                "val_macro_f1", "lr"} <= set(first)

    def test_checkpoint_carries_feature_stats(self, tmp_path):
        store = StubStore()
        fit(store, stub_windows(["a"]), stub_windows(["b"]), SMALL_MODEL,
            quick_config(max_epochs=1), tmp_path)
        _, header = load_checkpoint(tmp_path / "best.ckpt")
        assert header["extra"]["feature_stats"] == {"mean": 0.0, "std": 1.0}

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            fit(StubStore(), [], [], SMALL_MODEL, quick_config(), tmp_path)

    def test_type_loss_zero_without_error_windows(self, tmp_path):
        store = StubStore()
        train = [w for w in stub_windows(["a", "b"]) if not w.detect_label]
        report = fit(store, train, stub_windows(["c"]), SMALL_MODEL,
                     quick_config(max_epochs=1, balance_sampling=False),
                     tmp_path)
        assert report.epochs[0].type_loss == 0.0

    def test_interrupt_writes_emergency_checkpoint(self, tmp_path):
        class InterruptingStore(StubStore):
            def __init__(self):
                self.calls = 0

            def window_values(self, sample):
                self.calls += 1
                if self.calls > 30:
                    raise KeyboardInterrupt
                return super().window_values(sample)

        with pytest.raises(KeyboardInterrupt):
            fit(InterruptingStore(), stub_windows(["a", "b"]), stub_windows(["c"]),
                SMALL_MODEL, quick_config(), tmp_path)
        assert (tmp_path / "emergency.ckpt").exists()

    def test_early_stop_on_constant_metric(self, tmp_path):
        class ConstantValTrainer(Trainer):
            def evaluate_windows(self, params, windows, batch_size=64):
                return 0.1, 0.25

        trainer = ConstantValTrainer(
            StubStore(), stub_windows(["a"]), stub_windows(["b"]), SMALL_MODEL,
            quick_config(max_epochs=20, early_stop_patience=3), tmp_path,
        )
        report = trainer.run()
        assert report.stopped_early
        assert len(report.epochs) == 4  # patience + 1
        assert report.best_epoch == 1
