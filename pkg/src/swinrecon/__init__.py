"""Undersampled MRI reconstruction with a shifted-window transformer generator
and single/dual-discriminator adversarial training."""

from .kspace import UndersamplingMask, fft2c, gaussian1d_mask, ifft2c, undersample, zero_fill
from .swin import GeneratorConfig, SwinGenerator, count_params

__version__ = "0.1.0"

__all__ = [
    "GeneratorConfig",
    "SwinGenerator",
    "UndersamplingMask",
    "count_params",
    "fft2c",
    "gaussian1d_mask",
    "ifft2c",
    "undersample",
    "zero_fill",
]
