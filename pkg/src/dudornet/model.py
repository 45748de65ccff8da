"""Dilated residual dense restoration networks and the dual-domain recurrent model."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn

from .core import ConfigurationError, ValidationError, load_array, save_array
from .transforms import data_consistency_t, fft2c_t, from_channels_t, ifft2c_t, to_channels_t

PAPER_DILATIONS = (1, 2, 4, 4)
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    n_rec: int = 5
    n_sdrdb: int = 2
    base_channels: int = 64
    growth_channels: int = 32
    kernel: int = 3
    se_reduction: int = 8
    lambda_dc: float = 0.01
    use_prior: bool = True
    use_dual_domain: bool = True
    use_dilation: bool = True
    share_weights: bool = True

    def __post_init__(self):
        if not 1 <= self.n_rec <= 10:
            raise ConfigurationError(f"n_rec must lie in [1, 10], got {self.n_rec}")
        if not 1 <= self.n_sdrdb <= 8:
            raise ConfigurationError(f"n_sdrdb must lie in [1, 8], got {self.n_sdrdb}")
        for name in ("base_channels", "growth_channels"):
            value = getattr(self, name)
            if value < 1 or value % self.se_reduction:
                raise ConfigurationError(
                    f"{name}={value} must be a positive multiple of se_reduction={self.se_reduction}")
        if self.kernel != 3:
            raise ConfigurationError("only 3x3 kernels are supported")
        if self.lambda_dc < 0:
            raise ConfigurationError(f"lambda_dc must be nonnegative, got {self.lambda_dc}")

    @property
    def dilations(self):
        return PAPER_DILATIONS if self.use_dilation else (1, 1, 1, 1)

    @property
    def in_channels(self):
        return 4 if self.use_prior else 2

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls(**_parse_key_values(text, cls))


def _parse_key_values(text, cls):
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in types:
            raise ConfigurationError(f"unknown key {key!r} for {cls.__name__}")
        out[key] = _coerce(value, types[key])
    return out


def _coerce(value: str, typ):
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    if "bool" in typ:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"not a boolean: {value!r}")
    if "int" in typ:
        return int(value)
    if "float" in typ:
        return float(value)
    return value


def receptive_field(kernel: int, dilations) -> int:
    """Receptive field of stacked dilated convolutions.

    Each layer covers ``K + (K - 1)(D - 1)`` and stacking two layers gives
    ``R1 + R2 - 1``.

    >>> receptive_field(3, [1, 2, 4, 4])
    23
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigurationError(f"kernel must be odd and positive, got {kernel}")
    total = 1
    for d in dilations:
        if d < 1:
            raise ConfigurationError(f"dilations must be positive, got {d}")
        total = total + (kernel + (kernel - 1) * (d - 1)) - 1
    return total


class SqueezeExcite(nn.Module):
    def __init__(self, channels, reduction):
        super().__init__()
        self.down = nn.Conv2d(channels, channels // reduction, 1)
        self.act = nn.ReLU()
        self.up = nn.Conv2d(channels // reduction, channels, 1)

    def gate(self, x):
        s = x.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.up(self.act(self.down(s))))

    def forward(self, x, gate=None):
        return x * (self.gate(x) if gate is None else gate)


class SDRDB(nn.Module):
    """Four densely connected dilated convolutions, 1x1 fusion, SE gating, local residual."""

    def __init__(self, channels, growth, dilations=PAPER_DILATIONS, se_reduction=8):
        super().__init__()
        if len(dilations) != 4:
            raise ConfigurationError(f"expected 4 dilations, got {dilations}")
        self.channels = channels
        self.convs = nn.ModuleList(
            nn.Conv2d(channels + t * growth, growth, 3, padding=d, dilation=d)
            for t, d in enumerate(dilations))
        self.act = nn.LeakyReLU(LEAKY_SLOPE)
        self.fuse = nn.Conv2d(channels + 4 * growth, channels, 1)
        self.se = SqueezeExcite(channels, se_reduction)

    def local_features(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(self.act(conv(torch.cat(feats, 1))))
        return self.fuse(torch.cat(feats, 1))

    def forward(self, x, gate=None):
        if x.shape[1] != self.channels:
            raise ConfigurationError(f"SDRDB expects {self.channels} channels, got {x.shape[1]}")
        return self.se(self.local_features(x), gate) + x


class DRDNet(nn.Module):
    """Initial feature extraction, a chain of SDRDBs, global fusion and global residual."""

    def __init__(self, in_channels, cfg: ModelConfig):
        super().__init__()
        g0, g = cfg.base_channels, cfg.growth_channels
        self.in_channels = in_channels
        self.ife1 = nn.Conv2d(in_channels, g0, 3, padding=1)
        self.ife2 = nn.Conv2d(g0, g0, 3, padding=1)
        self.blocks = nn.ModuleList(
            SDRDB(g0, g, cfg.dilations, cfg.se_reduction) for _ in range(cfg.n_sdrdb))
        self.gff1 = nn.Conv2d(cfg.n_sdrdb * g0, g0, 1)
        self.gff2 = nn.Conv2d(g0, g0, 3, padding=1)
        self.final = nn.Conv2d(g0, 2, 3, padding=1)
        self.act = nn.ReLU()

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ConfigurationError(f"DRD-Net expects {self.in_channels} channels, got {x.shape[1]}")
        f_init = self.act(self.ife1(x))
        h = self.act(self.ife2(f_init))
        local = []
        for block in self.blocks:
            h = block(h)
            local.append(h)
        f_global = self.act(self.gff2(self.act(self.gff1(torch.cat(local, 1)))))
        return self.final(f_global + f_init)


@dataclass
class BlockOutputs:
    """Per-block image outputs (before DC) and k-space outputs (after DC).

    K-space tensors are in normalised units (divided by ``k_scale``).
    """

    images: List[torch.Tensor]
    kspaces: List[torch.Tensor]
    final: torch.Tensor
    k_scale: torch.Tensor

    def __len__(self):
        return len(self.images)


def kspace_scale(k_u: torch.Tensor) -> torch.Tensor:
    """Per-sample max magnitude, shape ``(B, 1, 1)``."""
    return k_u.abs().amax(dim=(-2, -1), keepdim=True).clamp_min(torch.finfo(k_u.real.dtype).tiny)


class DuDoRNet(nn.Module):
    """Recurrent image/k-space restoration with interleaved data consistency.

    Inputs are complex tensors of shape ``(B, H, W)``; ``mask`` is real and
    broadcastable to that shape.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        n_nets = 1 if cfg.share_weights else cfg.n_rec
        self.inets = nn.ModuleList(DRDNet(cfg.in_channels, cfg) for _ in range(n_nets))
        if cfg.use_dual_domain:
            self.knets = nn.ModuleList(DRDNet(cfg.in_channels, cfg) for _ in range(n_nets))
        else:
            self.knets = nn.ModuleList()

    def _net(self, nets, n):
        return nets[0] if self.cfg.share_weights else nets[n]

    def forward(self, k_u, mask, x_prior=None) -> BlockOutputs:
        cfg = self.cfg
        if cfg.use_prior and x_prior is None:
            raise ConfigurationError("model configured with a prior but none was given")
        if not cfg.use_prior:
            x_prior = None
        if k_u.dim() != 3:
            raise ValidationError(f"k_u must have shape (B, H, W), got {tuple(k_u.shape)}")
        if mask.shape[-2:] != k_u.shape[-2:]:
            raise ValidationError(f"mask shape {tuple(mask.shape)} does not match k_u {tuple(k_u.shape)}")
        if x_prior is not None and x_prior.shape != k_u.shape:
            raise ValidationError(f"prior shape {tuple(x_prior.shape)} does not match k_u {tuple(k_u.shape)}")
        lam = cfg.lambda_dc
        scale = kspace_scale(k_u)
        if x_prior is not None:
            p_img = to_channels_t(x_prior)
            k_prior = fft2c_t(x_prior)
            p_k = to_channels_t(k_prior / kspace_scale(k_prior))

        k = k_u
        x = ifft2c_t(k_u)
        images, kspaces = [], []
        for n in range(cfg.n_rec):
            inp = to_channels_t(x)
            if x_prior is not None:
                inp = torch.cat([inp, p_img], 1)
            x_hat = from_channels_t(self._net(self.inets, n)(inp))
            images.append(x_hat)
            k = data_consistency_t(fft2c_t(x_hat), k_u, mask, lam)
            if cfg.use_dual_domain:
                inp = to_channels_t(k / scale)
                if x_prior is not None:
                    inp = torch.cat([inp, p_k], 1)
                k_net = from_channels_t(self._net(self.knets, n)(inp)) * scale
                k = data_consistency_t(k_net, k_u, mask, lam)
            kspaces.append(k / scale)
            x = ifft2c_t(k)
        return BlockOutputs(images, kspaces, x, scale)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def zero_parameters(module: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


# --- checkpoints -------------------------------------------------------------

MANIFEST = "manifest.txt"
CONFIG = "model_config.txt"


def save_checkpoint(model: DuDoRNet, directory) -> Path:
    """One ``.dar`` per parameter, a name/shape/file manifest and the config.

    Array files hold at most rank 3, so tensors of higher rank are stored as
    ``(shape[0], -1)`` matrices; the manifest keeps the true shape.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, tensor in model.state_dict().items():
        fname = name.replace(".", "_") + ".dar"
        array = tensor.detach().cpu().numpy()
        stored = array.reshape(array.shape[0], -1) if array.ndim > 3 else array
        save_array(directory / fname, stored)
        shape = "x".join(str(s) for s in array.shape) or "scalar"
        lines.append(f"{name}\t{shape}\t{fname}\n")
    (directory / MANIFEST).write_text("".join(lines))
    (directory / CONFIG).write_text(model.cfg.to_text())
    return directory


def read_manifest(directory):
    entries = []
    for line in (Path(directory) / MANIFEST).read_text().splitlines():
        if line.strip():
            name, shape, fname = line.split("\t")
            entries.append((name, shape, fname))
    return entries


def load_checkpoint(directory, cfg: Optional[ModelConfig] = None) -> DuDoRNet:
    directory = Path(directory)
    if not (directory / MANIFEST).is_file():
        raise FileNotFoundError(f"no checkpoint manifest in {os.fspath(directory)}")
    stored = ModelConfig.from_text((directory / CONFIG).read_text())
    if cfg is not None and cfg != stored:
        raise ConfigurationError("checkpoint was written for a different model configuration")
    model = DuDoRNet(stored)
    expected = model.state_dict()
    state = {}
    for name, shape, fname in read_manifest(directory):
        if name not in expected:
            raise ConfigurationError(f"unexpected parameter {name!r} in checkpoint")
        target = tuple(expected[name].shape)
        declared = () if shape == "scalar" else tuple(int(v) for v in shape.split("x"))
        array = load_array(directory / fname)
        if declared != target or array.size != int(np.prod(target)):
            raise ConfigurationError(f"shape mismatch for {name}: {shape} vs {target}")
        array = array.reshape(target)
        state[name] = torch.from_numpy(np.ascontiguousarray(array))
    missing = set(expected) - set(state)
    if missing:
        raise ConfigurationError(f"checkpoint is missing {sorted(missing)}")
    model.load_state_dict(state)
    return model


def with_toggles(cfg: ModelConfig, **changes) -> ModelConfig:
    return replace(cfg, **changes)
