"""Dual-domain recurrent reconstruction of undersampled MRI with a prior contrast."""

from .core import (ComplexField, ConfigurationError, Domain, FormatError, Pattern, Sample,
                   SamplingMask, UnsupportedError, ValidationError, load_array, save_array)
from .data import PhantomSpec, augment, generate_phantom, load_split, make_dataset
from .estimator import DuDoRNetReconstructor
from .evaluation import ReconReport, evaluate, mse, psnr, ssim
from .model import (DuDoRNet, ModelConfig, count_parameters, load_checkpoint, receptive_field,
                    save_checkpoint)
from .sampling import achieved_acceleration, make_mask
from .training import TrainConfig, ablation_grid, total_loss, train
from .transforms import DCConfig, apply_mask, data_consistency, fft2c, ifft2c, zero_fill_recon

__version__ = "0.1.0"

__all__ = [
    "ComplexField", "ConfigurationError", "DCConfig", "Domain", "DuDoRNet",
    "DuDoRNetReconstructor", "FormatError", "ModelConfig", "Pattern", "PhantomSpec",
    "ReconReport", "Sample", "SamplingMask", "TrainConfig", "UnsupportedError",
    "ValidationError", "ablation_grid", "achieved_acceleration", "apply_mask", "augment",
    "count_parameters", "data_consistency", "evaluate", "fft2c", "generate_phantom", "ifft2c",
    "load_array", "load_checkpoint", "load_split", "make_dataset", "make_mask", "mse", "psnr",
    "receptive_field", "save_array", "save_checkpoint", "ssim", "total_loss", "train",
    "zero_fill_recon",
]
