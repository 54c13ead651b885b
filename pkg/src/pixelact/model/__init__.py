"""Policy architecture: token layout, masked backbone, action decoder."""

from .config import ModelConfig
from .layout import TokenLayout, build_mask
from .policy import PolicyModel
from .idm import InverseDynamicsModel, pseudo_label
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .train import TrainConfig, train_idm, train_policy

__all__ = [
    "ModelConfig",
    "TokenLayout",
    "build_mask",
    "PolicyModel",
    "InverseDynamicsModel",
    "pseudo_label",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "train_idm",
    "train_policy",
]
