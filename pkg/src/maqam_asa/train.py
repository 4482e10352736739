"""Training loop: AdamW, reduce-on-plateau, early stopping, checkpointing.

Runs are deterministic for a fixed seed: sampler order, dropout masks, and
SpecAugment placement all derive from per-epoch child generators of the
config seed.
"""

from __future__ import annotations

import json
import signal
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, spec_augment
from .dataset import WindowSample
from .errors import EmptyDatasetError, NonFiniteError
from .model import (
    ModelConfig,
    TwoHeadCRNN,
    focal_loss,
    focal_loss_grad,
    save_checkpoint,
    weighted_bce,
    weighted_bce_grad,
)
from .model.losses import PROB_CLAMP


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 2e-4
    batch_size: int = 16
    max_epochs: int = 20
    early_stop_patience: int = 10
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_min_delta: float = 1e-4
    min_lr: float = 1e-6
    seed: int = 42
    checkpoint_every: int = 5
    gamma: float = 2.0
    alpha: tuple[float, float, float] = (1.0, 1.0, 5.0)
    pos_weight: float | None = None  # default: #clean / #error from the manifest
    balance_sampling: bool = True
    hard_negative_fraction: float = 0.25
    hard_negative_boost: float = 2.0
    use_spec_augment: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = list(self.alpha)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "alpha" in d:
            d["alpha"] = tuple(d["alpha"])
        return cls(**d)


@dataclass
class EpochStats:
    epoch: int
    detect_loss: float
    type_loss: float
    val_detect_f1: float
    val_macro_f1: float
    lr: float


@dataclass
class TrainReport:
    epochs: list[EpochStats]
    best_epoch: int
    best_val_macro_f1: float
    wall_time: float
    stopped_early: bool

    def to_jsonl(self) -> str:
        lines = [json.dumps(asdict(e), sort_keys=True) for e in self.epochs]
        lines.append(
            json.dumps(
                {
                    "best_epoch": self.best_epoch,
                    "best_val_macro_f1": self.best_val_macro_f1,
                    "wall_time": round(self.wall_time, 3),
                    "stopped_early": self.stopped_early,
                },
                sort_keys=True,
            )
        )
        return "\n".join(lines) + "\n"


class AdamW:
    """Decoupled weight decay: decay is applied to the parameter directly,
    separately from the adaptive gradient step."""

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name}")
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= self.lr * update
            if not np.all(np.isfinite(p)):
                raise NonFiniteError(f"non-finite parameter after update: {name}")


def adamw_step(params, grads, opt: AdamW) -> AdamW:
    """Single optimizer step; returns the (mutated) optimizer state."""
    opt.step(params, grads)
    return opt


class PlateauScheduler:
    """Halve the learning rate after `patience` epochs without improvement."""

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 3,
                 min_delta: float = 1e-4, min_lr: float = 1e-6):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.min_lr = min_lr
        self.best: float | None = None
        self.bad_epochs = 0

    def update(self, metric: float) -> float:
        if self.best is None or metric > self.best + self.min_delta:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


class EarlyStopper:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best: float | None = None
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, metric: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        if self.best is None or metric > self.best:
            self.best = metric
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved(self) -> bool:
        return self.bad_epochs == 0


def _f1(tp: int, fp: int, fn: int) -> float:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def window_metrics(detect_probs, type_preds, samples: list[WindowSample],
                   threshold: float = 0.5) -> tuple[float, float]:
    """(detection F1, type macro-F1) at window level.

    Type macro-F1 is computed over true-error windows, one-vs-rest per class,
    with absent classes contributing 0 (mirrors the imbalanced-corpus
    convention in the evaluation module).
    """
    y = np.array([s.detect_label for s in samples])
    flag = np.asarray(detect_probs) >= threshold
    tp = int(np.sum(flag & (y == 1)))
    fp = int(np.sum(flag & (y == 0)))
    fn = int(np.sum(~flag & (y == 1)))
    detect_f1 = _f1(tp, fp, fn)

    err_rows = np.flatnonzero(y == 1)
    f1s = []
    if err_rows.size:
        from .annotations import ERROR_TYPES

        true_types = np.array(
            [ERROR_TYPES.index(samples[i].type_label) for i in err_rows]
        )
        pred_types = np.asarray(type_preds)[err_rows]
        for k in range(3):
            ktp = int(np.sum((pred_types == k) & (true_types == k)))
            kfp = int(np.sum((pred_types == k) & (true_types != k)))
            kfn = int(np.sum((pred_types != k) & (true_types == k)))
            f1s.append(_f1(ktp, kfp, kfn))
    macro = float(np.mean(f1s)) if f1s else 0.0
    return detect_f1, macro


class Trainer:
    """Owns one training run end to end."""

    def __init__(self, features, train_windows: list[WindowSample],
                 val_windows: list[WindowSample], model_config: ModelConfig,
                 train_config: TrainConfig, out_dir: str | Path,
                 augment_config: AugmentConfig | None = None):
        if not train_windows:
            raise EmptyDatasetError("no training windows")
        self.features = features
        self.train_windows = train_windows
        self.val_windows = val_windows
        self.model_config = model_config
        self.cfg = train_config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.augment_config = augment_config or AugmentConfig()
        self.net = TwoHeadCRNN(model_config)

        from .annotations import ERROR_TYPES

        self._type_index = {t: i for i, t in enumerate(ERROR_TYPES)}
        n_err = sum(s.detect_label for s in train_windows)
        n_clean = len(train_windows) - n_err
        self.pos_weight = (
            train_config.pos_weight
            if train_config.pos_weight is not None
            else (n_clean / n_err if n_err else 1.0)
        )
        self._n_err = n_err
        self._n_clean = n_clean

    # ------------------------------------------------------------- plumbing

    def _sample_order(self, epoch: int, hard_negatives: np.ndarray | None) -> np.ndarray:
        n = len(self.train_windows)
        weights = np.ones(n)
        if self.cfg.balance_sampling and self._n_err and self._n_clean:
            boost = self._n_clean / self._n_err
            for i, s in enumerate(self.train_windows):
                if s.detect_label:
                    weights[i] = boost
        if hard_negatives is not None and hard_negatives.size:
            weights[hard_negatives] *= self.cfg.hard_negative_boost
        rng = np.random.default_rng([self.cfg.seed, epoch, 11])
        return rng.choice(n, size=n, replace=True, p=weights / weights.sum())

    def _batches(self, order: np.ndarray):
        """Group the sampled order into same-frame-count batches."""
        buckets: dict[int, list[int]] = {}
        for i in order:
            s = self.train_windows[i]
            key = self.features.n_frames(s.length)
            buckets.setdefault(key, []).append(int(i))
            if len(buckets[key]) == self.cfg.batch_size:
                yield buckets.pop(key)
        for key in sorted(buckets):
            yield buckets[key]

    def _batch_tensors(self, indices: list[int], windows, rng=None):
        mats = []
        for i in indices:
            v = self.features.window_values(windows[i])
            if rng is not None and self.cfg.use_spec_augment:
                v = spec_augment(v, self.augment_config, rng)
            mats.append(v)
        x = np.stack(mats)[:, None, :, :]
        y_det = np.array([float(windows[i].detect_label) for i in indices])
        y_type = np.array(
            [
                self._type_index[windows[i].type_label] if windows[i].detect_label else 0
                for i in indices
            ]
        )
        return x, y_det, y_type

    # ----------------------------------------------------------------- loop

    def run(self) -> TrainReport:
        cfg = self.cfg
        t0 = time.monotonic()
        params = self.net.init_params(seed=cfg.seed, dtype=np.float32)
        opt = AdamW(cfg.lr, cfg.weight_decay)
        scheduler = PlateauScheduler(
            cfg.lr, cfg.plateau_factor, cfg.plateau_patience,
            cfg.plateau_min_delta, cfg.min_lr,
        )
        stopper = EarlyStopper(cfg.early_stop_patience)
        alpha = np.asarray(cfg.alpha)
        epochs: list[EpochStats] = []
        hard_negatives: np.ndarray | None = None
        stopped_early = False

        interrupted = {"flag": False}
        previous_handler = None

        def _on_interrupt(signum, frame):
            interrupted["flag"] = True

        try:
            previous_handler = signal.signal(signal.SIGINT, _on_interrupt)
        except ValueError:
            previous_handler = None  # not the main thread; still catch KeyboardInterrupt

        def _save(kind: str, epoch: int, metrics: dict):
            save_checkpoint(
                self.out_dir / f"{kind}.ckpt", params, self.model_config,
                epoch=epoch, metrics=metrics, kind=kind,
                extra={"feature_stats": {"mean": self.features.stats.mean,
                                         "std": self.features.stats.std},
                       "train_config": cfg.to_dict()},
            )

        try:
            for epoch in range(1, cfg.max_epochs + 1):
                order = self._sample_order(epoch, hard_negatives)
                drop_rng = np.random.default_rng([cfg.seed, epoch, 13])
                aug_rng = np.random.default_rng([cfg.seed, epoch, 17])
                det_sum = type_sum = 0.0
                n_batches = n_type_batches = 0
                clean_losses: dict[int, float] = {}

                for batch in self._batches(order):
                    x, y_det, y_type = self._batch_tensors(batch, self.train_windows, aug_rng)
                    out, cache = self.net.forward(
                        params, x, train=True, rng=drop_rng, want_cache=True
                    )
                    mask = y_det.astype(bool)
                    det_loss = weighted_bce(out.detect_prob, y_det, self.pos_weight)
                    typ_loss = focal_loss(out.type_probs, y_type, alpha, cfg.gamma, mask)
                    if not np.isfinite(det_loss + typ_loss):
                        raise NonFiniteError("non-finite training loss")
                    g_det = weighted_bce_grad(out.detect_prob, y_det, self.pos_weight)
                    g_typ = focal_loss_grad(out.type_probs, y_type, alpha, cfg.gamma, mask)
                    grads = self.net.backward(params, cache, g_det, g_typ)
                    opt.lr = scheduler.lr
                    opt.step(params, grads)

                    det_sum += det_loss
                    n_batches += 1
                    if mask.any():
                        type_sum += typ_loss
                        n_type_batches += 1
                    p = np.clip(out.detect_prob, PROB_CLAMP, 1 - PROB_CLAMP)
                    for j, i in enumerate(batch):
                        if not y_det[j]:
                            clean_losses[i] = -float(np.log(1.0 - p[j]))
                    if interrupted["flag"]:
                        raise KeyboardInterrupt

                if cfg.hard_negative_fraction > 0 and clean_losses:
                    idx = np.array(sorted(clean_losses))
                    losses = np.array([clean_losses[i] for i in idx])
                    from .augment import hard_negative_mine

                    picked = hard_negative_mine(losses, cfg.hard_negative_fraction)
                    hard_negatives = idx[picked]

                val_detect_f1, val_macro_f1 = self.evaluate_windows(params, self.val_windows)
                lr_now = scheduler.lr
                epochs.append(
                    EpochStats(
                        epoch=epoch,
                        detect_loss=round(det_sum / max(n_batches, 1), 6),
                        type_loss=round(type_sum / max(n_type_batches, 1), 6),
                        val_detect_f1=round(val_detect_f1, 6),
                        val_macro_f1=round(val_macro_f1, 6),
                        lr=lr_now,
                    )
                )
                scheduler.update(val_macro_f1)
                stop = stopper.update(epoch, val_macro_f1)
                if stopper.improved:
                    _save("best", epoch, {"val_macro_f1": val_macro_f1,
                                          "val_detect_f1": val_detect_f1})
                if epoch % cfg.checkpoint_every == 0:
                    _save(f"epoch{epoch:03d}", epoch, {"val_macro_f1": val_macro_f1})
                if stop:
                    stopped_early = True
                    break
        except (KeyboardInterrupt, NonFiniteError):
            _save("emergency", len(epochs), {})
            raise
        finally:
            if previous_handler is not None:
                signal.signal(signal.SIGINT, previous_handler)

        report = TrainReport(
            epochs=epochs,
            best_epoch=stopper.best_epoch,
            best_val_macro_f1=stopper.best or 0.0,
            wall_time=time.monotonic() - t0,
            stopped_early=stopped_early,
        )
        (self.out_dir / "train_report.jsonl").write_text(report.to_jsonl())
        return report

    # ------------------------------------------------------------------ eval

    def evaluate_windows(self, params, windows: list[WindowSample],
                         batch_size: int = 64) -> tuple[float, float]:
        if not windows:
            return 0.0, 0.0
        probs, preds = self.score_windows(params, windows, batch_size)
        return window_metrics(probs, preds, windows)

    def score_windows(self, params, windows: list[WindowSample],
                      batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode (detect_prob, argmax type) per window."""
        probs = np.zeros(len(windows))
        preds = np.zeros(len(windows), dtype=int)
        by_len: dict[int, list[int]] = {}
        for i, s in enumerate(windows):
            by_len.setdefault(self.features.n_frames(s.length), []).append(i)
        for _, idxs in sorted(by_len.items()):
            for lo in range(0, len(idxs), batch_size):
                chunk = idxs[lo : lo + batch_size]
                x, _, _ = self._batch_tensors(chunk, windows)
                out = self.net.forward(params, x, train=False)
                probs[chunk] = out.detect_prob
                preds[chunk] = out.type_probs.argmax(axis=1)
        return probs, preds


def fit(features, train_windows, val_windows, model_config: ModelConfig,
        train_config: TrainConfig, out_dir, augment_config=None) -> TrainReport:
    """Train a model and write checkpoints + a JSONL report under out_dir."""
    trainer = Trainer(features, train_windows, val_windows, model_config,
                      train_config, out_dir, augment_config)
    return trainer.run()
