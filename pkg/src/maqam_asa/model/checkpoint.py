"""Versioned binary checkpoints: JSON header + named float32 blocks.

Layout: magic, format version, header length, header JSON (config, config
hash, epoch, metrics, kind, block index), then each parameter's values as
little-endian float32 in header-index order. Loading verifies the stored
config hash against the caller's config.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigHashMismatchError, CorruptCheckpointError, VersionMismatchError
from .config import ModelConfig, config_hash

MAGIC = b"MASA"
FORMAT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], config: ModelConfig,
                    epoch: int = 0, metrics: dict | None = None,
                    kind: str = "best", extra: dict | None = None) -> None:
    names = sorted(params)
    header = {
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "epoch": epoch,
        "metrics": metrics or {},
        "kind": kind,
        "extra": extra or {},
        "blocks": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f4").tobytes())
    tmp.replace(path)


def load_checkpoint(path, config: ModelConfig | None = None,
                    dtype=np.float32) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (params, header). Raises on version/config/structure problems."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpointError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version} != {FORMAT_VERSION}")
    try:
        header = json.loads(raw[12 : 12 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: bad header") from exc
    if config is not None and header.get("config_hash") != config_hash(config):
        raise ConfigHashMismatchError(
            f"{path}: checkpoint was written for a different model configuration"
        )
    params: dict[str, np.ndarray] = {}
    offset = 12 + hlen
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        n_bytes = int(np.prod(shape)) * 4 if shape else 4
        chunk = raw[offset : offset + n_bytes]
        if len(chunk) != n_bytes:
            raise CorruptCheckpointError(f"{path}: truncated at block {block['name']}")
        params[block["name"]] = (
            np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(dtype)
        )
        offset += n_bytes
    if offset != len(raw):
        raise CorruptCheckpointError(f"{path}: trailing bytes after last block")
    return params, header


def stored_config(header: dict) -> ModelConfig:
    return ModelConfig.from_dict(header["config"])
