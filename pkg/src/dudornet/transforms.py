"""Centered orthonormal FFTs, undersampling and data consistency.

Every operation has a NumPy form working on :class:`ComplexField` /
:class:`SamplingMask` and a torch form (suffix ``_t``) used inside the
network, where images travel as complex tensors of shape ``(..., H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import (ComplexField, Domain, SamplingMask, ValidationError,
                   check_finite, check_same_shape)

DEFAULT_LAMBDA = 0.01


@dataclass(frozen=True)
class DCConfig:
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValidationError(f"lambda must be nonnegative, got {self.lam}")


def _data(f):
    return f.data if isinstance(f, ComplexField) else np.asarray(f)


def _mask(m):
    return m.mask if isinstance(m, SamplingMask) else np.asarray(m)


def fft2c_array(x: np.ndarray) -> np.ndarray:
    x = check_finite(x, "image")
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho"),
                           axes=(-2, -1))


def ifft2c_array(k: np.ndarray) -> np.ndarray:
    k = check_finite(k, "kspace")
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k, axes=(-2, -1)), norm="ortho"),
                           axes=(-2, -1))


def _keep_precision(out, like):
    return out.astype(np.complex64) if like.dtype in (np.float32, np.complex64) else out


def fft2c(x) -> ComplexField:
    """Centered orthonormal 2D DFT, image to k-space."""
    data = _data(x)
    return ComplexField(_keep_precision(fft2c_array(data), data), Domain.KSPACE)


def ifft2c(k) -> ComplexField:
    data = _data(k)
    return ComplexField(_keep_precision(ifft2c_array(data), data), Domain.IMAGE)


def apply_mask(k, mask) -> ComplexField:
    data, m = _data(k), _mask(mask)
    check_same_shape(data, m, names=("kspace", "mask"))
    if not np.any(m):
        raise ValidationError("all-zero mask")
    return ComplexField(data * m.astype(data.real.dtype), Domain.KSPACE)


def zero_fill_recon(k_u, mask) -> ComplexField:
    """Inverse transform of the undersampled k-space (the ZP baseline)."""
    check_same_shape(_data(k_u), _mask(mask), names=("k_u", "mask"))
    return ifft2c(k_u)


def data_consistency(k_pred, k_u, mask, cfg: DCConfig = DCConfig()) -> ComplexField:
    """Blend sampled entries toward the measurements.

    ``(lam * k_pred + k_u) / (lam + 1)`` where the mask is set, ``k_pred``
    elsewhere. With ``lam == 0`` the measurements replace the prediction.
    """
    kp, ku, m = _data(k_pred), _data(k_u), _mask(mask)
    check_same_shape(kp, ku, m, names=("k_pred", "k_u", "mask"))
    check_finite(kp, "k_pred")
    lam = cfg.lam
    blended = (lam * kp + ku) / (lam + 1)
    return ComplexField(np.where(m.astype(bool), blended, kp), Domain.KSPACE)


# --- torch -----------------------------------------------------------------

def fft2c_t(x: torch.Tensor) -> torch.Tensor:
    x = torch.fft.ifftshift(x, dim=(-2, -1))
    return torch.fft.fftshift(torch.fft.fft2(x, norm="ortho"), dim=(-2, -1))


def ifft2c_t(k: torch.Tensor) -> torch.Tensor:
    k = torch.fft.ifftshift(k, dim=(-2, -1))
    return torch.fft.fftshift(torch.fft.ifft2(k, norm="ortho"), dim=(-2, -1))


def data_consistency_t(k_pred, k_u, mask, lam=DEFAULT_LAMBDA):
    """Differentiable counterpart of :func:`data_consistency`; ``mask`` is real."""
    if lam < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lam}")
    blended = (lam * k_pred + k_u) / (lam + 1)
    return torch.where(mask.bool(), blended, k_pred)


def to_channels_t(z: torch.Tensor) -> torch.Tensor:
    """``(B, H, W)`` complex to ``(B, 2, H, W)`` real."""
    return torch.stack([z.real, z.imag], dim=1)


def from_channels_t(c: torch.Tensor) -> torch.Tensor:
    return torch.complex(c[:, 0], c[:, 1])
