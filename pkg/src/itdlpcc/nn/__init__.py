"""Small numpy tensor library: autograd ops, 3D layers, losses, Adam, checkpoints."""

from .autograd import Tensor, as_tensor, no_grad, parameter
from .checkpoint import CheckpointError, arch_hash, load_checkpoint, save_checkpoint
from .layers import IRB, Conv3d, ConvTranspose3d, Module
from .losses import block_distortion, color_mse, focal_loss, total_distortion
from .optim import Adam, AdamState, adam_step

__all__ = [
    "IRB", "Adam", "AdamState", "CheckpointError", "Conv3d", "ConvTranspose3d", "Module", "Tensor",
    "adam_step", "arch_hash", "as_tensor", "block_distortion", "color_mse", "focal_loss",
    "load_checkpoint", "no_grad", "parameter", "save_checkpoint", "total_distortion",
]
