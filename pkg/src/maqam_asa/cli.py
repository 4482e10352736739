"""Command-line entry point: synth, features, windows, train, eval, tonic,
serve, report.

All hyperparameters live in one JSON config whose defaults reproduce the
documented training setup, so the zero-flag path is the published recipe.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .annotations import ERROR_TYPES
from .augment import AugmentConfig
from .dataset import (
    DEFAULT_RATIOS,
    DEFAULT_SPECS,
    LONG_WINDOWS,
    WindowSpec,
    build_dataset,
    make_windows,
    save_manifest,
    split_by_song,
    window_counts,
)
from .errors import MaqamAsaError
from .evaluate import evaluate_corpus, per_class_metrics, search_threshold_for_model
from .features import FeatureStats
from .model import ModelConfig, TwoHeadCRNN, load_checkpoint, stored_config
from .pipeline import FeatureStore, scan_corpus
from .train import TrainConfig, fit

log = logging.getLogger("maqam_asa")


def default_config() -> dict:
    return {
        "model": ModelConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "augment": dataclasses.asdict(AugmentConfig()),
        "threshold": 0.75,
        "split": {"ratios": list(DEFAULT_RATIOS), "seed": 42},
        "window_specs": [
            {"length": s.length, "hop": s.hop, "train_only": s.train_only}
            for s in DEFAULT_SPECS
        ],
    }


def load_config(path: str | None) -> dict:
    config = default_config()
    if path:
        user = json.loads(Path(path).read_text())
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(config.get(key), dict):
                config[key].update(value)
            else:
                config[key] = value
    return config


def _window_specs(config: dict) -> tuple[WindowSpec, ...]:
    return tuple(
        WindowSpec(length=s["length"], hop=s["hop"], train_only=s.get("train_only", False))
        for s in config["window_specs"]
    )


def _prepare_corpus(corpus: str, config: dict, seed: int | None):
    songs = scan_corpus(corpus)
    durations = {s.song_id: s.duration for s in songs}
    annotations = {s.song_id: s.annotations for s in songs}
    masses = {sid: len(make_windows(d, LONG_WINDOWS)) for sid, d in durations.items()}
    split_seed = seed if seed is not None else config["split"]["seed"]
    split = split_by_song(masses, tuple(config["split"]["ratios"]), split_seed)
    windows = build_dataset(durations, annotations, _window_specs(config), split)
    return songs, annotations, split, windows


# ------------------------------------------------------------- subcommands

def cmd_synth(args, config) -> int:
    from .synth import gen_corpus

    counts = tuple(int(x) for x in args.errors.split(","))
    if len(counts) != 3:
        raise MaqamAsaError("--errors wants three comma-separated counts")
    gen_corpus(args.out, args.songs, counts, seed=args.seed,
               length_s=args.length, n_singers=args.singers)
    print(f"wrote {args.songs} songs with errors {counts} to {args.out}")
    return 0


def cmd_features(args, config) -> int:
    from .features import log_mel, save_cache
    from .audio_io import load_wav

    songs, _, split, _ = _prepare_corpus(args.corpus, config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store = FeatureStore.from_songs(songs, stats_songs=split.songs("train"))
    for song in songs:
        clip = load_wav(song.path, song_id=song.song_id, singer_id=song.singer_id)
        save_cache(out / f"{song.song_id}.melcache", log_mel(clip), store.stats)
    (out / "stats.json").write_text(
        json.dumps({"mean": store.stats.mean, "std": store.stats.std}, indent=2)
    )
    print(f"cached {len(songs)} spectrograms to {out} "
          f"(mean {store.stats.mean:.3f} dB, std {store.stats.std:.3f} dB)")
    return 0


def cmd_windows(args, config) -> int:
    _, _, split, windows = _prepare_corpus(args.corpus, config, args.seed)
    save_manifest(args.out, windows, split)
    summary = window_counts(windows)
    total = sum(row["windows"] for row in summary.values())
    print(f"{'Split':<12} {'Windows':>8} {'Share':>7} {'Errors':>7}")
    for name in ("train", "validation", "test"):
        row = summary[name]
        share = 100.0 * row["windows"] / total if total else 0.0
        print(f"{name:<12} {row['windows']:>8} {share:>6.1f}% {row['errors']:>7}")
    print(f"{'total':<12} {total:>8}")
    print(f"manifest written to {args.out}")
    return 0


def cmd_train(args, config) -> int:
    songs, _, split, windows = _prepare_corpus(args.corpus, config, args.seed)
    store = FeatureStore.from_songs(songs, stats_songs=split.songs("train"))
    model_cfg = ModelConfig.from_dict(config["model"])
    train_cfg = TrainConfig.from_dict(config["train"])
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if args.epochs is not None:
        train_cfg = dataclasses.replace(train_cfg, max_epochs=args.epochs)
    augment_cfg = AugmentConfig(**config["augment"])
    report = fit(store, windows["train"], windows["validation"], model_cfg,
                 train_cfg, args.out, augment_cfg)
    print(f"trained {len(report.epochs)} epochs; best epoch {report.best_epoch} "
          f"(val macro-F1 {report.best_val_macro_f1:.3f}); "
          f"checkpoints in {args.out}")
    return 0


def _print_confusion_metrics(confusion, truth_totals) -> None:
    per_class, macro = per_class_metrics(confusion, truth_totals)
    print(f"{'Error type':<20} {'Detected':>8} {'Precision':>10} {'Recall':>8} {'F1':>7}")
    for t in ERROR_TYPES:
        row = per_class[t.value]
        print(f"{t.value:<20} {int(row['detected']):>8} "
              f"{100 * row['precision']:>9.1f}% {100 * row['recall']:>7.1f}% "
              f"{row['f1']:>7.3f}")
    print(f"Type macro-F1: {macro:.3f}")


def cmd_eval(args, config) -> int:
    if args.confusion:
        confusion = json.loads(Path(args.confusion).read_text())
        totals = [int(x) for x in args.truth_totals.split(",")]
        _print_confusion_metrics(confusion, totals)
        return 0
    if not args.corpus or not args.checkpoint:
        raise MaqamAsaError("eval needs --corpus and --checkpoint (or --confusion)")
    params, header = load_checkpoint(args.checkpoint)
    model_cfg = stored_config(header)
    stats_d = header.get("extra", {}).get("feature_stats")
    stats = FeatureStats(**stats_d) if stats_d else None
    songs, annotations, split, windows = _prepare_corpus(args.corpus, config, args.seed)
    store = FeatureStore.from_songs(songs, stats=stats,
                                    stats_songs=split.songs("train"))
    net = TwoHeadCRNN(model_cfg)
    threshold = args.threshold
    if threshold is None:
        if windows["validation"]:
            threshold = search_threshold_for_model(net, params, store,
                                                   windows["validation"])
            log.info("threshold search picked %.3f", threshold)
        else:
            threshold = config["threshold"]
    report = evaluate_corpus(net, params, store, annotations, threshold)
    if args.out:
        Path(args.out).write_text(report.to_json())
    print(report.format_tables())
    return 0


def cmd_tonic(args, config) -> int:
    from .audio_io import load_wav
    from .pitch import estimate_tonic

    tonic_hz, confidence = estimate_tonic(load_wav(args.path))
    print(f"tonic: {tonic_hz:.2f} Hz (confidence {confidence:.3f})")
    return 0


def cmd_serve(args, config) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.storage, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_report(args, config) -> int:
    payload = json.loads(Path(args.report).read_text())
    totals = payload.get("truth_totals") or np.asarray(payload["confusion"]).sum(axis=1)
    _print_confusion_metrics(payload["confusion"], totals)
    print(f"Detection: P {100 * payload['detection_precision']:.1f}% "
          f"R {100 * payload['detection_recall']:.1f}% "
          f"F1 {payload['detection_f1']:.3f} "
          f"(threshold {payload['threshold']:.3f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maqam-asa",
        description="vocal error detection toolkit for microtonal singing",
    )
    parser.add_argument("--config", help="JSON config file (defaults are the "
                                         "published training setup)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--songs", type=int, default=10)
    p.add_argument("--errors", default="30,9,5",
                   help="fine_pitch,rhythm,modal_drift totals")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--length", type=float, default=60.0)
    p.add_argument("--singers", type=int, default=5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="cache log-mel spectrograms")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("windows", help="build the window manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("train", help="train the detector")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a confusion matrix")
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--confusion", help="JSON file with a 3x3 confusion matrix")
    p.add_argument("--truth-totals", default="150,46,25")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tonic", help="print the tonic of a WAV file")
    p.add_argument("path")
    p.set_defaults(func=cmd_tonic)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--storage", required=True)
    p.add_argument("--static", default=None, help="directory with the web UI build")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="render an evaluation report as text")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def run(argv=None) -> int:
    level = os.environ.get("MAQAM_ASA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    config = load_config(args.config)
    try:
        return args.func(args, config)
    except (MaqamAsaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
