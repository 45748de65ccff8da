"""Paired-contrast phantoms, dataset persistence and augmentation."""

from __future__ import annotations

import math
import shutil
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import (ComplexField, ConfigurationError, Domain, Sample, load_array,
                   save_array)

# (label fraction, intensity) knots; label 0 is background
PRIOR_CONTRAST = ((0.0, 0.0), (0.01, 0.35), (0.5, 0.6), (1.0, 1.0))
TARGET_CONTRAST = ((0.0, 0.0), (0.01, 0.15), (0.4, 0.3), (0.7, 0.7), (1.0, 1.0))


@dataclass(frozen=True)
class PhantomSpec:
    H: int = 128
    W: int = 128
    n_shapes: int = 9
    seed: int = 0
    prior_contrast: tuple = PRIOR_CONTRAST
    target_contrast: tuple = TARGET_CONTRAST
    phase_amplitude: float = math.pi / 8
    blur_sigma: float = 0.7

    def __post_init__(self):
        if self.H < 32 or self.W < 32:
            raise ConfigurationError(f"phantoms need at least 32x32 pixels, got {self.H}x{self.W}")
        if not 0 <= self.phase_amplitude <= math.pi / 4:
            raise ConfigurationError("phase_amplitude must lie in [0, pi/4]")
        if self.n_shapes < 1:
            raise ConfigurationError("n_shapes must be positive")
        for knots in (self.prior_contrast, self.target_contrast):
            xs, ys = zip(*knots)
            if any(np.diff(xs) <= 0) or any(np.diff(ys) < 0):
                raise ConfigurationError(f"contrast map must be monotone: {knots}")
            if min(ys) < 0 or max(ys) > 1:
                raise ConfigurationError(f"contrast intensities must lie in [0, 1]: {knots}")


def label_map(spec: PhantomSpec) -> np.ndarray:
    """Integer labels: 0 background, 1 body, 2.. random ellipses and rectangles."""
    rng = np.random.default_rng(spec.seed)
    H, W = spec.H, spec.W
    yy, xx = np.mgrid[0:H, 0:W]
    yy = (yy - H / 2) / (H / 2)
    xx = (xx - W / 2) / (W / 2)
    labels = np.zeros((H, W), dtype=np.int64)

    ry, rx = rng.uniform(0.75, 0.9), rng.uniform(0.65, 0.85)
    body = (yy / ry) ** 2 + (xx / rx) ** 2 <= 1
    labels[body] = 1
    for i in range(spec.n_shapes):
        cy, cx = rng.uniform(-0.5, 0.5) * ry, rng.uniform(-0.5, 0.5) * rx
        ay, ax = rng.uniform(0.06, 0.35, size=2)
        angle = rng.uniform(0, np.pi)
        c, s = np.cos(angle), np.sin(angle)
        u = c * (xx - cx) + s * (yy - cy)
        v = -s * (xx - cx) + c * (yy - cy)
        if rng.uniform() < 0.6:
            inside = (u / ax) ** 2 + (v / ay) ** 2 <= 1
        else:
            inside = (np.abs(u) <= ax) & (np.abs(v) <= ay)
        labels[inside & body] = 2 + i
    return labels


def _contrast(labels, knots, n_labels):
    xs, ys = zip(*knots)
    return np.interp(labels / max(n_labels, 1), xs, ys)


def _smooth_phase(spec: PhantomSpec, rng) -> np.ndarray:
    H, W = spec.H, spec.W
    yy, xx = np.mgrid[0:H, 0:W]
    yy = (yy - H / 2) / (H / 2)
    xx = (xx - W / 2) / (W / 2)
    coeffs = rng.normal(size=6)
    poly = (coeffs[0] + coeffs[1] * xx + coeffs[2] * yy
            + coeffs[3] * xx * yy + coeffs[4] * xx ** 2 + coeffs[5] * yy ** 2)
    peak = np.abs(poly).max()
    return spec.phase_amplitude * poly / peak if peak > 0 else poly * 0


def generate_phantom(spec: PhantomSpec):
    """Return ``(x_prior, x_full)`` sharing one label map and one phase field."""
    labels = label_map(spec)
    rng = np.random.default_rng([spec.seed, 1])
    n_labels = spec.n_shapes + 1
    phase = np.exp(1j * _smooth_phase(spec, rng))
    out = []
    for knots in (spec.prior_contrast, spec.target_contrast):
        mag = _contrast(labels, knots, n_labels)
        if spec.blur_sigma > 0:
            mag = ndimage.gaussian_filter(mag, spec.blur_sigma, mode="constant")
        mag = np.clip(mag, 0.0, 1.0)
        out.append(ComplexField((mag * phase).astype(np.complex64), Domain.IMAGE))
    return out[0], out[1]


def make_sample(spec: PhantomSpec, sample_id="") -> Sample:
    x_prior, x_full = generate_phantom(spec)
    return Sample.from_images(x_prior.data, x_full.data, sample_id=sample_id)


# --- dataset directories ------------------------------------------------------

MANIFEST = "manifest.txt"
SPLITS = ("train", "val", "test")


def sample_seed(base_seed: int, index: int) -> int:
    return base_seed * 1_000_003 + index


def make_dataset(n_train, n_val, n_test, spec_template: PhantomSpec, out_dir, overwrite=False):
    """Write phantom samples and a tab-separated manifest; return the manifest rows."""
    counts = {"train": n_train, "val": n_val, "test": n_test}
    for split, n in counts.items():
        if n < 1:
            raise ConfigurationError(f"{split} count must be at least 1, got {n}")
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise FileExistsError(f"{out} is not empty (pass overwrite=True)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    index = 0
    for split in SPLITS:
        for _ in range(counts[split]):
            sid = f"{split}_{index:05d}"
            spec = replace(spec_template, seed=sample_seed(spec_template.seed, index))
            sample = make_sample(spec, sid)
            paths = {}
            for key, fieldval in (("prior", sample.x_prior), ("full", sample.x_full),
                                  ("kspace", sample.k_full)):
                paths[key] = f"{sid}_{key}.dar"
                save_array(out / paths[key], fieldval.data)
            rows.append((sid, split, paths["prior"], paths["full"], paths["kspace"]))
            index += 1
    lines = ["id\tsplit\tprior\tfull\tkspace\n"]
    lines += ["\t".join(r) + "\n" for r in rows]
    (out / MANIFEST).write_text("".join(lines))
    return rows


def read_manifest(data_dir):
    text = (Path(data_dir) / MANIFEST).read_text().splitlines()
    return [tuple(line.split("\t")) for line in text[1:] if line.strip()]


def load_split(data_dir, split=None):
    data_dir = Path(data_dir)
    samples = []
    for sid, sp, prior, full, kspace in read_manifest(data_dir):
        if split is not None and sp != split:
            continue
        samples.append(Sample(
            ComplexField(load_array(data_dir / prior), Domain.IMAGE),
            ComplexField(load_array(data_dir / full), Domain.IMAGE),
            ComplexField(load_array(data_dir / kspace), Domain.KSPACE),
            sample_id=sid))
    return samples


# --- augmentation ---------------------------------------------------------------

def _transform_params(seed):
    rng = np.random.default_rng(seed)
    return bool(rng.uniform() < 0.5), bool(rng.uniform() < 0.5), int(rng.integers(4))


def _apply(img, flip_h, flip_v, quarter_turns):
    if flip_h:
        img = img[:, ::-1]
    if flip_v:
        img = img[::-1, :]
    return np.ascontiguousarray(np.rot90(img, quarter_turns))


def augment(sample: Sample, seed, free_angle=None) -> Sample:
    """Apply one random flip/rotation to prior and target together.

    Rotations are multiples of 90 degrees unless ``free_angle`` (degrees) is
    given, in which case a bilinear rotation by that angle follows.
    """
    flip_h, flip_v, turns = _transform_params(seed)
    if not (flip_h or flip_v or turns or free_angle):
        return sample
    images = []
    for f in (sample.x_prior, sample.x_full):
        img = _apply(f.data, flip_h, flip_v, turns)
        if free_angle:
            rot = [ndimage.rotate(part, free_angle, reshape=False, order=1, mode="constant")
                   for part in (img.real, img.imag)]
            img = (rot[0] + 1j * rot[1]).astype(img.dtype)
        images.append(img)
    mask = sample.mask if sample.mask is not None and sample.mask.shape == images[1].shape else None
    return Sample.from_images(images[0], images[1], mask, sample.sample_id)


def transform_parameters(seed):
    """``(flip_horizontal, flip_vertical, quarter_turns)`` drawn by :func:`augment`."""
    return _transform_params(seed)
