"""Deep-supervised dual-domain training, checkpointing and ablation configs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch

from .core import ConfigurationError, Pattern, Sample, ValidationError
from .data import augment
from .evaluation import normalized_magnitudes, ssim
from .model import BlockOutputs, DuDoRNet, ModelConfig, _coerce, save_checkpoint
from .sampling import make_mask
from .transforms import fft2c_t, to_channels_t

log = logging.getLogger(__name__)

MASK_MODES = ("fixed_per_sample", "redraw_per_step")
MAX_NONFINITE_STEPS = 50
KSPACE_LOSS_UNITS = ("physical", "normalized")


class DivergenceError(RuntimeError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 1000
    batch_size: int = 4
    learning_rate: float = 1e-4
    seed: int = 0
    mask_mode: str = "redraw_per_step"
    pattern: str = "radial"
    target_R: float = 5.0
    w_image: float = 1.0
    w_kspace: float = 1.0
    checkpoint_every: int = 0
    val_every: int = 0
    augment: bool = True
    mask_pool: int = 16
    center_fraction: float = 0.08
    kspace_loss_units: str = "physical"

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigurationError(f"steps must be nonnegative, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigurationError(f"mask_mode must be one of {MASK_MODES}")
        Pattern(self.pattern)
        if self.w_image < 0 or self.w_kspace < 0:
            raise ConfigurationError("loss weights must be nonnegative")
        if self.kspace_loss_units not in KSPACE_LOSS_UNITS:
            raise ConfigurationError(f"kspace_loss_units must be one of {KSPACE_LOSS_UNITS}")
        if self.mask_pool < 1:
            raise ConfigurationError("mask_pool must be positive")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "model":
                lines += [f"model.{g.name}={getattr(self.model, g.name)}" for g in fields(self.model)]
            else:
                lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: Optional["TrainConfig"] = None) -> "TrainConfig":
        base = base or cls()
        own = {f.name: f.type for f in fields(cls) if f.name != "model"}
        model_types = {f.name: f.type for f in fields(ModelConfig)}
        top, model = {}, {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key.startswith("model."):
                name = key[len("model."):]
                if name not in model_types:
                    raise ConfigurationError(f"unknown model key {name!r}")
                model[name] = _coerce(value, model_types[name])
            elif key in own:
                top[key] = _coerce(value, own[key])
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
        return replace(base, model=replace(base.model, **model), **top)


# --- loss ------------------------------------------------------------------------

def _channel_mse(a, b):
    return (to_channels_t(a) - to_channels_t(b)).pow(2).mean()


def block_losses(outputs: BlockOutputs, x_f, k_f, cfg: TrainConfig) -> List[torch.Tensor]:
    """Per-block ``w_image * L_image + w_kspace * L_kspace``.

    ``k_f`` is in physical units. With ``kspace_loss_units="physical"`` the
    k-space term equals the image-domain MSE of the k-space output (the
    transform is unitary), so both terms share one scale. ``"normalized"``
    divides by the per-sample scale the k-space network sees, which shrinks
    the term by roughly ``H * W``.
    """
    if x_f.shape != outputs.final.shape or k_f.shape != outputs.final.shape:
        raise ValidationError(
            f"target shapes {tuple(x_f.shape)}, {tuple(k_f.shape)} do not match "
            f"outputs {tuple(outputs.final.shape)}")
    k_ref = k_f / outputs.k_scale
    physical = cfg.kspace_loss_units == "physical"
    losses = []
    for x_hat, k_hat in zip(outputs.images, outputs.kspaces):
        term = cfg.w_image * _channel_mse(x_hat, x_f)
        if cfg.model.use_dual_domain:
            if physical:
                k_term = _channel_mse(k_hat * outputs.k_scale, k_f)
            else:
                k_term = _channel_mse(k_hat, k_ref)
            term = term + cfg.w_kspace * k_term
        losses.append(term)
    return losses


def total_loss(outputs: BlockOutputs, x_f, k_f, cfg: TrainConfig) -> torch.Tensor:
    return sum(block_losses(outputs, x_f, k_f, cfg))


# --- batches ---------------------------------------------------------------------

class BatchSampler:
    """Deterministic stream of (k_u, mask, prior, x_f, k_f) batches."""

    def __init__(self, samples: Sequence[Sample], cfg: TrainConfig, dtype=torch.complex64):
        if not samples:
            raise ValidationError("training set is empty")
        self.samples = list(samples)
        self.cfg = cfg
        self.dtype = dtype
        self.rng = np.random.default_rng(cfg.seed)
        self.order: List[int] = []

    def mask_for(self, index, seed=None):
        s = self.samples[index]
        H, W = s.shape
        if seed is None:
            seed = index if self.cfg.mask_mode == "fixed_per_sample" else int(
                self.rng.integers(self.cfg.mask_pool))
        return make_mask(self.cfg.pattern, H, W, self.cfg.target_R, seed,
                         self.cfg.center_fraction).mask

    def next(self):
        idx = []
        while len(idx) < self.cfg.batch_size:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.samples)))
            idx.append(self.order.pop(0))
        return self.batch(idx, augment_data=self.cfg.augment)

    def batch(self, idx, augment_data=False):
        x_f, prior, masks = [], [], []
        for i in idx:
            s = self.samples[i]
            if augment_data:
                s = augment(s, int(self.rng.integers(2 ** 31)))
            x_f.append(s.x_full.data)
            prior.append(s.x_prior.data)
            masks.append(self.mask_for(i))
        x_f = torch.from_numpy(np.stack(x_f)).to(self.dtype)
        prior = torch.from_numpy(np.stack(prior)).to(self.dtype)
        mask = torch.from_numpy(np.stack(masks)).to(x_f.real.dtype)
        k_f = fft2c_t(x_f)
        return k_f * mask, mask, prior, x_f, k_f


# --- training loop ----------------------------------------------------------------

@dataclass
class TrainResult:
    model: DuDoRNet
    curve: List[dict]
    skipped_steps: int
    checkpoint_dir: Optional[Path] = None

    def curve_tsv(self) -> str:
        out = ["step\ttrain_loss\tval_ssim\n"]
        for row in self.curve:
            val = row.get("val_ssim")
            out.append(f"{row['step']}\t{row['train_loss']:.8e}\t"
                       f"{'' if val is None else f'{val:.6f}'}\n")
        return "".join(out)


def mean_ssim(model: DuDoRNet, samples: Sequence[Sample], cfg: TrainConfig, batch_size=8):
    """Mean magnitude SSIM with each sample's fixed mask (seed = sample index)."""
    fixed = replace(cfg, mask_mode="fixed_per_sample", augment=False)
    sampler = BatchSampler(samples, fixed)
    scores = []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            idx = list(range(start, min(start + batch_size, len(samples))))
            k_u, mask, prior, x_f, _ = sampler.batch(idx)
            out = model(k_u, mask, prior if model.cfg.use_prior else None).final
            for pred, ref in zip(out.numpy(), x_f.numpy()):
                scores.append(ssim(*normalized_magnitudes(pred, ref)))
    model.train(was_training)
    return float(np.mean(scores))


def _grads_finite(model):
    return all(p.grad is None or torch.isfinite(p.grad).all() for p in model.parameters())


def _divergence_dump(model, out_dir, message, curve) -> Path:
    """Write a text diagnostic and, when the weights are still finite, a checkpoint."""
    dump = Path(out_dir) / "diverged"
    dump.mkdir(parents=True, exist_ok=True)
    bad = [name for name, p in model.named_parameters() if not torch.isfinite(p).all()]
    last = curve[-1]["train_loss"] if curve else float("nan")
    lines = [message, f"last finite loss: {last}", f"non-finite parameters: {len(bad)}"]
    lines += [f"  {name}" for name in bad]
    (dump / "diagnostic.txt").write_text("\n".join(lines) + "\n")
    if not bad:
        save_checkpoint(model, dump / "checkpoint")
    return dump


def train(cfg: TrainConfig, samples: Sequence[Sample], val_samples: Sequence[Sample] = (),
          out_dir=None, model: Optional[DuDoRNet] = None,
          callback: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Minimise the summed block losses with Adam at a fixed learning rate.

    Steps whose gradients are not finite are skipped and counted. More than
    ``MAX_NONFINITE_STEPS`` consecutive non-finite losses raise
    :class:`DivergenceError`.
    """
    torch.manual_seed(cfg.seed)
    if model is None:
        model = DuDoRNet(cfg.model)
    model.train()
    sampler = BatchSampler(samples, cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    out_dir = Path(out_dir) if out_dir is not None else None
    curve, skipped, bad_run = [], 0, 0

    for step in range(1, cfg.steps + 1):
        k_u, mask, prior, x_f, k_f = sampler.next()
        outputs = model(k_u, mask, prior if cfg.model.use_prior else None)
        loss = total_loss(outputs, x_f, k_f, cfg)
        opt.zero_grad(set_to_none=True)
        if not torch.isfinite(loss):
            bad_run += 1
            skipped += 1
            if bad_run > MAX_NONFINITE_STEPS:
                message = f"loss non-finite for {bad_run} consecutive steps (last step {step})"
                dump = _divergence_dump(model, out_dir, message, curve) if out_dir else None
                raise DivergenceError(message, dump)
            continue
        bad_run = 0
        loss.backward()
        if not _grads_finite(model):
            skipped += 1
            continue
        opt.step()

        row = {"step": step, "train_loss": float(loss.detach())}
        if val_samples and cfg.val_every and step % cfg.val_every == 0:
            row["val_ssim"] = mean_ssim(model, val_samples, cfg)
        curve.append(row)
        if callback is not None:
            callback(row)
        if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(model, out_dir / "checkpoint")

    ckpt = None
    if out_dir is not None:
        ckpt = save_checkpoint(model, out_dir / "checkpoint")
        (out_dir / "train_config.txt").write_text(cfg.to_text())
        result = TrainResult(model, curve, skipped, ckpt)
        (out_dir / "loss_curve.tsv").write_text(result.curve_tsv())
        return result
    return TrainResult(model, curve, skipped, ckpt)


# --- ablations -------------------------------------------------------------------

# row letter -> (recurrent, dual domain, dilation)
TABLE2_ROWS = {
    "A": (False, False, False),
    "B": (True, False, False),
    "C": (False, True, False),
    "D": (False, False, True),
    "E": (True, True, False),
    "F": (True, False, True),
    "G": (False, True, True),
    "H": (True, True, True),
}
TABLE2_NAMES = {
    "A": "Net-baseline", "B": "Net-Rec", "C": "Net-DD", "D": "Net-DIL",
    "E": "Net-Rec-DD", "F": "Net-Rec-DIL", "G": "Net-DD-DIL", "H": "Net-Rec-DD-DIL",
}


def ablation_config(base: TrainConfig, letter: str) -> TrainConfig:
    letter = letter.upper()
    if letter not in TABLE2_ROWS:
        raise ConfigurationError(f"unknown ablation row {letter!r}")
    rec, dd, dil = TABLE2_ROWS[letter]
    model = replace(base.model, n_rec=base.model.n_rec if rec else 1,
                    use_dual_domain=dd, use_dilation=dil)
    return replace(base, model=model)


def ablation_grid(base: TrainConfig, sweep=(1, 2, 3, 4, 5)):
    """Eight component rows followed by an ``n_rec`` sweep of the full model.

    Returns ``(tag, TrainConfig)`` pairs; sweep tags read ``N<n_rec>``.
    """
    grid = [(letter, ablation_config(base, letter)) for letter in TABLE2_ROWS]
    full = ablation_config(base, "H")
    grid += [(f"N{n}", replace(full, model=replace(full.model, n_rec=n))) for n in sweep]
    return grid
