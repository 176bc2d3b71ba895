"""Minimal reverse-mode autodiff, 3D layers and optimizers."""
from . import functional
from .autograd import Tape, Tensor, backward
from .checkpoint import checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint
from .gradcheck import CheckResult, gradcheck
from .layers import Conv3d, Linear, Module
from .optim import Adam, AdamState, PlateauSchedule, adam_step, clip_weights, plateau_step

__all__ = [
    "functional", "Tape", "Tensor", "backward", "checkpoint_bytes", "checkpoint_from_bytes",
    "load_checkpoint", "save_checkpoint", "CheckResult", "gradcheck", "Conv3d", "Linear", "Module",
    "Adam", "AdamState", "PlateauSchedule", "adam_step", "clip_weights", "plateau_step",
]
