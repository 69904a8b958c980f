"""Depth-guided one-to-one image relighting: bifurcated RGB-D network,
losses, data pipeline, trainer, and evaluation."""

from .errors import (
    ConfigError,
    CorruptionError,
    DegenerateInputError,
    DivergenceError,
    ImageIOError,
    IndexingError,
    MBNetError,
    PairingError,
    ShapeError,
)
from .losses import LossWeights, charbonnier, perceptual, ssim, ssim_loss, total_loss
from .metrics import evaluate_dir, mps, psnr, ssim_metric
from .model import (
    EncoderTaps,
    KernelField,
    MBNet,
    ModelConfig,
    build_model,
    dynamic_conv,
    effective_kernel_size,
    ktu,
)
from .trainer import Checkpoint, TrainConfig, fit, load_checkpoint, lr_at, save_checkpoint

__all__ = [
    "MBNetError", "ConfigError", "ShapeError", "DegenerateInputError", "IndexingError",
    "PairingError", "ImageIOError", "CorruptionError", "DivergenceError",
    "ModelConfig", "MBNet", "EncoderTaps", "KernelField", "build_model",
    "dynamic_conv", "ktu", "effective_kernel_size",
    "LossWeights", "charbonnier", "ssim", "ssim_loss", "perceptual", "total_loss",
    "psnr", "ssim_metric", "mps", "evaluate_dir",
    "TrainConfig", "Checkpoint", "lr_at", "fit", "save_checkpoint", "load_checkpoint",
]

__version__ = "0.1.0"
