import math

import numpy as np
import pytest
import torch
from skimage.metrics import structural_similarity

from dudornet.core import ValidationError
from dudornet.data import PhantomSpec, make_sample
from dudornet.evaluation import (ReconReport, comparison_summary, evaluate, fingerprint,
                                 image_metrics, mask_seed, mse, normalized_magnitudes, psnr,
                                 reconstruct, ssim)
from dudornet.model import DuDoRNet, ModelConfig, save_checkpoint

from oracles import brute_mse

TOY = dict(n_rec=2, n_sdrdb=1, base_channels=8, growth_channels=8)


def test_mse_cases():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(16, 16))
    assert mse(a, a) == 0
    assert abs(mse(a, a + 0.1) - 0.01) < 1e-15
    b = rng.uniform(size=(16, 16))
    assert abs(mse(a, b) - brute_mse(a, b)) <= 1e-12
    with pytest.raises(ValidationError):
        mse(a, b[:8])


def test_psnr_cases():
    a = np.zeros((4, 4))
    assert psnr(a, a) == 200.0
    assert abs(psnr(a, a + 0.1) - 20) < 1e-9
    assert abs(psnr(a, a + 0.01) - 40) < 1e-9


def test_psnr_matches_definition():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        assert psnr(a, b) == -10 * math.log10(mse(a, b))


def test_ssim_identity_symmetry_negation(phantom_pair):
    _, full = phantom_pair
    x = np.abs(full) / np.abs(full).max()
    assert abs(ssim(x, x) - 1.0) < 1e-12
    y = np.clip(x + np.random.default_rng(2).normal(0, 0.05, x.shape), 0, 1)
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-15)
    assert ssim(x, 1 - x) < 0.2


def test_ssim_matches_skimage(phantom_pair):
    _, full = phantom_pair
    x = np.abs(full).astype(np.float64)
    x /= x.max()
    y = np.clip(x + np.random.default_rng(3).normal(0, 0.1, x.shape), 0, 1)
    ref = structural_similarity(x, y, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    assert abs(ssim(x, y) - ref) < 1e-10


def test_ssim_small_image_rejected():
    with pytest.raises(ValidationError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_normalization_uses_reference_peak():
    ref = np.full((12, 12), 2.0 + 0j)
    p, r = normalized_magnitudes(ref * 0.5, ref)
    assert r.max() == 1.0 and p.max() == 0.5
    with pytest.raises(ValidationError):
        normalized_magnitudes(ref, np.zeros((12, 12)))


def test_metric_bounds():
    rng = np.random.default_rng(4)
    m = image_metrics(rng.normal(size=(16, 16)), rng.normal(size=(16, 16)))
    assert -1 <= m["ssim"] <= 1 and m["mse"] >= 0 and np.isfinite(m["psnr_db"])


def test_mask_seed_is_stable():
    assert mask_seed(3, "radial", 4) == mask_seed(3, "radial", 4.0)
    assert mask_seed(3, "radial", 4) != mask_seed(4, "radial", 4)


@pytest.fixture(scope="module")
def samples():
    return [make_sample(PhantomSpec(H=32, W=32, seed=s), f"s{s}") for s in range(3)]


def test_full_sampling_hits_cap(samples):
    torch.manual_seed(0)
    model = DuDoRNet(ModelConfig(lambda_dc=0.0, **TOY))
    report = evaluate(model, samples, ["radial"], [1.0])
    assert all(r["psnr_db"] == 200.0 for r in report.rows if r["method"] == "model")


def test_reconstruct_leaves_model_untouched(samples):
    model = DuDoRNet(ModelConfig(**TOY))
    s = samples[0]
    out = reconstruct(model, s.k_full.data, np.ones(s.shape), s.x_prior.data)
    assert out.dtype == np.complex128
    assert next(model.parameters()).dtype == torch.float32


def test_zero_filled_ssim_falls_with_acceleration():
    many = [make_sample(PhantomSpec(H=64, W=64, seed=100 + s), str(s)) for s in range(20)]
    model = DuDoRNet(ModelConfig(**dict(TOY, n_rec=1)))
    report = evaluate(model, many, ["radial", "spiral"], [2, 3, 4, 5, 6])
    for pattern in ("radial", "spiral"):
        zp = [report.aggregates("zp", pattern, R)["ssim"][0] for R in (2, 3, 4, 5, 6)]
        assert all(b <= a + 0.005 for a, b in zip(zp, zp[1:])), zp


def test_report_round_trip_and_order_invariance(tmp_path, samples):
    model = DuDoRNet(ModelConfig(**TOY))
    report = evaluate(model, samples, ["cartesian"], [2.0])
    report.write(tmp_path)
    back = ReconReport.read(tmp_path)
    assert back.fingerprint == report.fingerprint and back.use_prior == report.use_prior
    assert len(back.rows) == len(report.rows) == 6
    agg = report.aggregates("model")
    shuffled = ReconReport(list(reversed(report.rows))).aggregates("model")
    for m in agg:
        assert agg[m][0] == pytest.approx(shuffled[m][0], rel=1e-12)
    text = (tmp_path / "summary.txt").read_text()
    assert "ZP" in text and "ssim" in text


def test_comparison_summary_columns(samples):
    with_prior = evaluate(DuDoRNet(ModelConfig(**TOY)), samples, ["radial"], [3.0])
    no_prior = evaluate(DuDoRNet(ModelConfig(use_prior=False, **TOY)), samples, ["radial"], [3.0])
    header = [l for l in comparison_summary(with_prior, no_prior).splitlines()
              if l.startswith("metric")][0]
    assert header.split("\t") == ["metric", "ZP", "DuDoRNet (with prior)", "DuDoRNet (no prior)"]


def test_fingerprint_sensitivity(tmp_path):
    model = DuDoRNet(ModelConfig(**TOY))
    save_checkpoint(model, tmp_path)
    base = fingerprint(tmp_path, "a=1")
    assert fingerprint(tmp_path, "a=2") != base
    target = sorted(tmp_path.glob("*.dar"))[0]
    data = bytearray(target.read_bytes())
    data[-1] ^= 1
    target.write_bytes(bytes(data))
    assert fingerprint(tmp_path, "a=1") != base
