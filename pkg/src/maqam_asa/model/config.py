"""Architecture hyperparameters for the two-head CNN-BiLSTM-attention net."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class ModelConfig:
    """Published architecture by default; reduced variants shrink every knob.

    Each conv block is 3x3 conv / batch norm / ReLU / 2x2 max pool, so the
    mel and time axes both shrink by 2**len(conv_channels). The flattened
    (channels x mel) vector per time step is projected to lstm_input_dim
    before the bidirectional LSTM.
    """

    n_mels: int = 128
    conv_channels: tuple[int, ...] = (32, 64, 128, 128)
    conv_dropout: float = 0.3
    lstm_input_dim: int = 512
    lstm_hidden: int = 256
    lstm_layers: int = 2
    lstm_dropout: float = 0.3
    attn_hidden: int = 256
    attn_dropout: float = 0.2
    head_dropout: float = 0.3
    type_hidden: int = 256
    n_classes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.n_mels % self.pool_factor != 0:
            raise ValueError(
                f"n_mels={self.n_mels} not divisible by pool factor {self.pool_factor}"
            )
        if self.lstm_layers < 1:
            raise ValueError("need at least one LSTM layer")

    @property
    def pool_factor(self) -> int:
        return 2 ** len(self.conv_channels)

    @property
    def mel_out(self) -> int:
        return self.n_mels // self.pool_factor

    @property
    def flatten_dim(self) -> int:
        return self.conv_channels[-1] * self.mel_out

    @property
    def feature_dim(self) -> int:
        return 2 * self.lstm_hidden

    @property
    def min_frames(self) -> int:
        return self.pool_factor

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


def config_hash(config: ModelConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


#: Reduced geometry used by the gradient self-check.
TINY_CONFIG = ModelConfig(
    n_mels=16,
    conv_channels=(4, 8),
    conv_dropout=0.0,
    lstm_input_dim=16,
    lstm_hidden=8,
    lstm_layers=2,
    lstm_dropout=0.0,
    attn_hidden=8,
    attn_dropout=0.0,
    head_dropout=0.0,
    type_hidden=8,
)
