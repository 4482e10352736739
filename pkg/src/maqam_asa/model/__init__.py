from .checkpoint import load_checkpoint, save_checkpoint, stored_config
from .config import TINY_CONFIG, ModelConfig, config_hash
from .losses import focal_loss, focal_loss_grad, weighted_bce, weighted_bce_grad
from .network import ModelOutput, TwoHeadCRNN

__all__ = [
    "ModelConfig",
    "ModelOutput",
    "TINY_CONFIG",
    "TwoHeadCRNN",
    "config_hash",
    "focal_loss",
    "focal_loss_grad",
    "load_checkpoint",
    "save_checkpoint",
    "stored_config",
    "weighted_bce",
    "weighted_bce_grad",
]
