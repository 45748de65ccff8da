"""Reconstruction quality metrics, sweep evaluation and reports.

Metrics compare magnitude images after dividing both by the reference's
peak magnitude, so the reference spans [0, 1].
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .core import (ComplexField, ConfigurationError, ValidationError, Pattern,
                   check_same_shape, save_array)
from .model import DuDoRNet, load_checkpoint
from .sampling import make_mask
from .transforms import apply_mask, fft2c_t, zero_fill_recon

PSNR_CAP = 200.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _as_array(a):
    # magnitudes are taken in double precision even for 32-bit inputs
    a = a.data if isinstance(a, ComplexField) else np.asarray(a)
    return a.astype(np.complex128 if np.iscomplexobj(a) else np.float64)


def normalized_magnitudes(pred, ref):
    """``(|pred|, |ref|)`` both divided by ``max |ref|``."""
    p, r = np.abs(_as_array(pred)), np.abs(_as_array(ref))
    check_same_shape(p, r, names=("prediction", "reference"))
    peak = r.max()
    if peak <= 0:
        raise ValidationError("reference image is identically zero")
    return p / peak, r / peak


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    check_same_shape(a, b, names=("a", "b"))
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB for unit peak, clipped at ``PSNR_CAP``."""
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(err))


def _gaussian_taps(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, taps):
    pad = (len(taps) - 1) // 2
    out = correlate1d(correlate1d(img, taps, axis=0, mode="reflect"), taps, axis=1, mode="reflect")
    return out[pad:-pad, pad:-pad]


def ssim(a, b, data_range=1.0) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), border excluded."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    check_same_shape(a, b, names=("a", "b"))
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ValidationError(f"SSIM needs 2D images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    taps = _gaussian_taps()
    mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a ** 2
    var_b = _filter_valid(b * b, taps) - mu_b ** 2
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def image_metrics(pred, ref) -> dict:
    p, r = normalized_magnitudes(pred, ref)
    return {"psnr_db": psnr(p, r), "ssim": ssim(p, r), "mse": mse(p, r)}


# --- reports -----------------------------------------------------------------

METRICS = ("psnr_db", "ssim", "mse")


@dataclass
class ReconReport:
    rows: List[dict] = field(default_factory=list)
    fingerprint: str = ""
    use_prior: bool = True

    def aggregates(self, method=None, pattern=None, target_R=None) -> dict:
        sel = [r for r in self.rows
               if (method is None or r["method"] == method)
               and (pattern is None or r["pattern"] == pattern)
               and (target_R is None or r["target_R"] == target_R)]
        out = {}
        for m in METRICS:
            vals = np.array([r[m] for r in sel], dtype=np.float64)
            out[m] = (float(vals.mean()), float(vals.std())) if vals.size else (math.nan, math.nan)
        return out

    def to_tsv(self) -> str:
        header = f"# fingerprint={self.fingerprint} use_prior={self.use_prior}\n"
        header += "sample_id\tmethod\tpattern\ttarget_R\tpsnr_db\tssim\tmse\n"
        body = "".join(
            f"{r['sample_id']}\t{r['method']}\t{r['pattern']}\t{r['target_R']:g}\t"
            f"{r['psnr_db']:.6f}\t{r['ssim']:.6f}\t{r['mse']:.8e}\n" for r in self.rows)
        return header + body

    @property
    def label(self) -> str:
        return "DuDoRNet (with prior)" if self.use_prior else "DuDoRNet (no prior)"

    def summary(self, *others: "ReconReport") -> str:
        """Metric x method table per (pattern, R): ZP, this model, then ``others``."""
        return comparison_summary(self, *others)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.tsv").write_text(self.to_tsv())
        (out / "summary.txt").write_text(self.summary())
        return out

    @classmethod
    def read(cls, path) -> "ReconReport":
        path = Path(path)
        if path.is_dir():
            path = path / "report.tsv"
        rows, meta = [], {}
        for line in path.read_text().splitlines():
            if line.startswith("#"):
                meta.update(item.split("=", 1) for item in line[1:].split())
                continue
            if not line.strip() or line.startswith("sample_id"):
                continue
            sid, method, pattern, R, p, s, e = line.split("\t")
            rows.append({"sample_id": sid, "method": method, "pattern": pattern,
                         "target_R": float(R), "psnr_db": float(p), "ssim": float(s),
                         "mse": float(e)})
        return cls(rows, meta.get("fingerprint", ""), meta.get("use_prior", "True") == "True")


def comparison_summary(report: ReconReport, *others: ReconReport) -> str:
    """ZP column from ``report`` followed by the model column of every report."""
    reports = (report,) + others
    lines = ["# fingerprint " + " ".join(r.fingerprint for r in reports)]
    combos = sorted({(r["pattern"], r["target_R"]) for r in report.rows})
    for pattern, R in combos:
        lines.append(f"## {pattern} R={R:g}")
        lines.append("metric\tZP\t" + "\t".join(r.label for r in reports))
        for m in METRICS:
            cells = [report.aggregates("zp", pattern, R)[m]]
            cells += [r.aggregates("model", pattern, R)[m] for r in reports]
            lines.append(m + "".join(f"\t{mean:.6g}±{std:.3g}" for mean, std in cells))
    return "\n".join(lines) + "\n"


def fingerprint(checkpoint_dir=None, config_text="") -> str:
    """SHA-256 over the config text and every byte of a checkpoint directory."""
    h = hashlib.sha256(config_text.encode())
    if checkpoint_dir is not None:
        for path in sorted(Path(checkpoint_dir).iterdir()):
            if path.is_file():
                h.update(path.name.encode())
                h.update(path.read_bytes())
    return h.hexdigest()[:16]


# --- evaluation ----------------------------------------------------------------

def recon_name(sample_id, pattern, target_R) -> str:
    return f"{sample_id}_{pattern}_R{float(target_R):g}.dar"


def mask_seed(sample_index: int, pattern: str, target_R: float) -> int:
    """Deterministic mask seed for one (sample, pattern, R) evaluation cell."""
    digest = hashlib.sha256(f"{sample_index}:{pattern}:{target_R:g}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def as_float64(model: DuDoRNet) -> DuDoRNet:
    """A 64-bit evaluation copy (the model itself if it already is one)."""
    if next(model.parameters()).dtype != torch.float64:
        model = copy.deepcopy(model).double()
    return model.eval()


def reconstruct(model: DuDoRNet, k_u, mask, x_prior=None) -> np.ndarray:
    """Run the model in 64-bit on one undersampled acquisition; returns the image."""
    model = as_float64(model)
    with torch.no_grad():
        ku = torch.from_numpy(np.array(k_u, dtype=np.complex128))[None]
        m = torch.from_numpy(np.array(mask, dtype=np.float64))
        prior = None
        if model.cfg.use_prior:
            if x_prior is None:
                raise ConfigurationError("model needs a prior image")
            prior = torch.from_numpy(np.array(x_prior, dtype=np.complex128))[None]
        return model(ku, m, prior).final[0].numpy()


def undersample(x_full, mask) -> np.ndarray:
    """64-bit ``M * fft2c(x_full)``."""
    k = fft2c_t(torch.from_numpy(np.array(x_full, dtype=np.complex128)))
    return (k * torch.from_numpy(np.array(mask, dtype=np.float64))).numpy()


def evaluate(model, samples: Sequence, patterns: Sequence[str], R_list: Sequence[float],
             checkpoint_dir=None, center_fraction=0.08, config_text=None,
             recon_dir=None) -> ReconReport:
    """Model and zero-filled metrics for every sample, pattern and acceleration.

    ``model`` is a network or a checkpoint directory. The report fingerprint
    hashes ``config_text`` (the model config when omitted) and the checkpoint.
    With ``recon_dir`` every model reconstruction is saved as
    ``<sample>_<pattern>_R<R>.dar``.
    """
    if not isinstance(model, DuDoRNet):
        checkpoint_dir = model
        model = load_checkpoint(model)
    model = as_float64(model)
    if recon_dir is not None:
        Path(recon_dir).mkdir(parents=True, exist_ok=True)
    text = model.cfg.to_text() if config_text is None else config_text
    report = ReconReport(fingerprint=fingerprint(checkpoint_dir, text),
                         use_prior=model.cfg.use_prior)
    for pattern in (Pattern(p).value for p in patterns):
        for R in R_list:
            for i, s in enumerate(samples):
                H, W = s.shape
                m = make_mask(pattern, H, W, R, mask_seed(i, pattern, R), center_fraction)
                k_u = undersample(s.x_full.data, m.mask)
                recon = reconstruct(model, k_u, m.mask, s.x_prior.data)
                if recon_dir is not None:
                    save_array(Path(recon_dir) / recon_name(s.sample_id or str(i), pattern, R),
                               recon)
                zp = zero_fill_recon(apply_mask(k_u, m), m).data
                for method, img in (("model", recon), ("zp", zp)):
                    row = {"sample_id": s.sample_id or str(i), "method": method,
                           "pattern": str(pattern), "target_R": float(R)}
                    row.update(image_metrics(img, s.x_full.data))
                    report.rows.append(row)
    return report
