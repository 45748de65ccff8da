"""Scikit-learn style wrapper around training and reconstruction."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import ConfigurationError, Sample, ValidationError, check_finite
from .evaluation import evaluate, mask_seed, normalized_magnitudes, reconstruct, ssim
from .model import ModelConfig
from .sampling import make_mask
from .training import TrainConfig, train
from .transforms import zero_fill_recon


def check_images(X, name="X") -> np.ndarray:
    """Stack of 2D images as a complex array of shape ``(n, H, W)``."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValidationError(f"{name} must have shape (n, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValidationError(f"{name} is empty")
    if min(X.shape[1:]) < 8:
        raise ValidationError(f"{name} images must be at least 8x8, got {X.shape[1:]}")
    check_finite(X, name)
    return X.astype(np.complex64 if X.dtype in (np.float32, np.complex64) else np.complex128)


def check_masks(masks, shape) -> np.ndarray:
    """Binary masks broadcast to ``shape`` (one per image)."""
    m = np.asarray(masks, dtype=np.float64)
    if m.ndim == 2 and m.shape == tuple(shape[1:]):
        m = np.broadcast_to(m, shape)
    if m.shape != tuple(shape):
        raise ValidationError(f"masks of shape {m.shape} do not match {tuple(shape)}")
    if not np.all((m == 0) | (m == 1)):
        raise ValidationError("mask entries must be 0 or 1")
    if np.any(m.reshape(m.shape[0], -1).sum(axis=1) == 0):
        raise ValidationError("every mask needs at least one sampled entry")
    return m


class DuDoRNetReconstructor(BaseEstimator):
    """Learned undersampled-MRI reconstruction with an optional prior contrast.

    ``fit`` takes fully sampled target images ``X`` (and matching ``priors``)
    and simulates undersampling during training. ``predict`` maps measured
    k-space and masks to images.

    Examples
    --------
    >>> import numpy as np
    >>> from dudornet.data import PhantomSpec, generate_phantom
    >>> pairs = [generate_phantom(PhantomSpec(H=32, W=32, seed=s)) for s in range(2)]
    >>> priors = np.stack([p.data for p, _ in pairs])
    >>> X = np.stack([f.data for _, f in pairs])
    >>> est = DuDoRNetReconstructor(n_rec=1, base_channels=8, growth_channels=8,
    ...                             steps=2, batch_size=2, pattern="spiral", target_R=3)
    >>> est.fit(X, priors=priors).predict_images(X, priors=priors).shape
    (2, 32, 32)
    """

    def __init__(self, n_rec=5, n_sdrdb=2, base_channels=64, growth_channels=32, se_reduction=8,
                 lambda_dc=0.01, use_prior=True, use_dual_domain=True, use_dilation=True,
                 share_weights=True, steps=1000, batch_size=4, learning_rate=1e-4, seed=0,
                 mask_mode="redraw_per_step", pattern="radial", target_R=5.0, w_image=1.0,
                 w_kspace=1.0, augment=True):
        self.n_rec = n_rec
        self.n_sdrdb = n_sdrdb
        self.base_channels = base_channels
        self.growth_channels = growth_channels
        self.se_reduction = se_reduction
        self.lambda_dc = lambda_dc
        self.use_prior = use_prior
        self.use_dual_domain = use_dual_domain
        self.use_dilation = use_dilation
        self.share_weights = share_weights
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.mask_mode = mask_mode
        self.pattern = pattern
        self.target_R = target_R
        self.w_image = w_image
        self.w_kspace = w_kspace
        self.augment = augment

    def train_config(self) -> TrainConfig:
        model = ModelConfig(
            n_rec=self.n_rec, n_sdrdb=self.n_sdrdb, base_channels=self.base_channels,
            growth_channels=self.growth_channels, se_reduction=self.se_reduction,
            lambda_dc=self.lambda_dc, use_prior=self.use_prior,
            use_dual_domain=self.use_dual_domain, use_dilation=self.use_dilation,
            share_weights=self.share_weights)
        return TrainConfig(
            model=model, steps=self.steps, batch_size=self.batch_size,
            learning_rate=self.learning_rate, seed=self.seed, mask_mode=self.mask_mode,
            pattern=self.pattern, target_R=self.target_R, w_image=self.w_image,
            w_kspace=self.w_kspace, augment=self.augment)

    def _samples(self, X, priors):
        X = check_images(X)
        if priors is None:
            if self.use_prior:
                raise ConfigurationError("use_prior=True needs priors")
            priors = np.zeros_like(X)
        priors = check_images(priors, "priors")
        if priors.shape != X.shape:
            raise ValidationError(f"priors shape {priors.shape} does not match X {X.shape}")
        return [Sample.from_images(p, x, sample_id=str(i)) for i, (p, x) in enumerate(zip(priors, X))]

    def fit(self, X, y=None, priors=None):
        """Train on fully sampled images ``X`` (``y`` is ignored)."""
        cfg = self.train_config()
        samples = self._samples(X, priors)
        result = train(cfg, samples)
        self.model_ = result.model.eval()
        self.curve_ = result.curve
        self.skipped_steps_ = result.skipped_steps
        self.image_shape_ = samples[0].shape
        return self

    def predict(self, k_u, masks, priors=None) -> np.ndarray:
        """Reconstruct images from undersampled k-space ``(n, H, W)``."""
        check_is_fitted(self, "model_")
        k_u = check_images(k_u, "k_u")
        masks = check_masks(masks, k_u.shape)
        if self.use_prior:
            if priors is None:
                raise ConfigurationError("use_prior=True needs priors")
            priors = check_images(priors, "priors")
        out = []
        for i in range(k_u.shape[0]):
            prior = priors[i] if self.use_prior else None
            out.append(reconstruct(self.model_, k_u[i] * masks[i], masks[i], prior))
        return np.stack(out)

    def predict_images(self, X, priors=None, masks=None) -> np.ndarray:
        """Undersample fully sampled ``X`` with the training pattern, then reconstruct."""
        check_is_fitted(self, "model_")
        samples = self._samples(X, priors if self.use_prior else None)
        if masks is None:
            masks = self._eval_masks(samples)
        k = np.stack([s.k_full.data for s in samples]).astype(np.complex128)
        priors = np.stack([s.x_prior.data for s in samples]) if self.use_prior else None
        return self.predict(k, masks, priors)

    def _eval_masks(self, samples):
        return np.stack([make_mask(self.pattern, *s.shape, self.target_R,
                                   mask_seed(i, self.pattern, self.target_R)).mask
                         for i, s in enumerate(samples)])

    def score(self, X, y=None, priors=None) -> float:
        """Mean magnitude SSIM of reconstructions of ``X`` at the training acceleration."""
        recon = self.predict_images(X, priors)
        X = check_images(X)
        return float(np.mean([ssim(*normalized_magnitudes(r, x)) for r, x in zip(recon, X)]))

    def zero_filled_score(self, X, priors=None) -> float:
        """Mean SSIM of the zero-filled baseline under the same masks as :meth:`score`."""
        samples = self._samples(X, priors if self.use_prior else None)
        scores = []
        for s, m in zip(samples, self._eval_masks(samples)):
            zp = zero_fill_recon(s.k_full.data * m, m).data
            scores.append(ssim(*normalized_magnitudes(zp, s.x_full.data)))
        return float(np.mean(scores))

    def report(self, X, priors=None, patterns=None, R_list=None):
        """:class:`~dudornet.evaluation.ReconReport` over a pattern/acceleration sweep."""
        check_is_fitted(self, "model_")
        samples = self._samples(X, priors if self.use_prior else None)
        return evaluate(self.model_, samples, patterns or [self.pattern],
                        R_list or [self.target_R], config_text=self.train_config().to_text())

    def state_dict(self):
        check_is_fitted(self, "model_")
        return {k: v.clone() for k, v in self.model_.state_dict().items()}


__all__ = ["DuDoRNetReconstructor", "check_images", "check_masks"]
