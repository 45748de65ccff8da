"""Acceptance criteria, one test each, with the stated tolerances and runtime budgets.

A PASS/FAIL line per criterion is printed in the terminal summary. Lines with
a letter suffix (for example ``8b``) are supporting checks from the module
examples, not numbered criteria.
"""

import time

import numpy as np
import pytest
import torch

from dudornet.data import PhantomSpec, make_sample, sample_seed
from dudornet.evaluation import evaluate, normalized_magnitudes, psnr, ssim
from dudornet.model import SDRDB, DRDNet, DuDoRNet, ModelConfig, count_parameters
from dudornet.sampling import _radial_cached, _spiral_cached, make_mask
from dudornet.training import BatchSampler, TrainConfig, mean_ssim, total_loss, train
from dudornet.transforms import (DCConfig, data_consistency, fft2c_array, fft2c_t,
                                 ifft2c_array, ifft2c_t)

from oracles import finite_difference_gradients, perturbation_footprint
import trend_study


def rand_complex(rng, shape, dtype=np.complex128):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)).astype(dtype)


# --- 1. data consistency -------------------------------------------------------

def test_c01_dc_exactness(criterion):
    start = time.time()
    rng = np.random.default_rng(100)
    exact, worst_blend = True, 0.0
    for _ in range(100):
        H, W = rng.integers(8, 65, size=2)
        kp, ku = rand_complex(rng, (H, W)), rand_complex(rng, (H, W))
        m = (rng.uniform(size=(H, W)) < rng.uniform(0.1, 0.9)).astype(np.float64)
        ku = ku * m
        out = data_consistency(kp, ku, m, DCConfig(0.0)).data
        exact &= bool(np.array_equal(out[m == 1], ku[m == 1]))
        exact &= bool(np.array_equal(out[m == 0], kp[m == 0]))
        blend = data_consistency(kp, ku, m, DCConfig(0.01)).data
        closed = np.where(m == 1, (0.01 * kp + ku) / 1.01, kp)
        worst_blend = max(worst_blend, np.linalg.norm(blend - closed) / np.linalg.norm(closed))
    elapsed = time.time() - start
    ok = exact and worst_blend <= 1e-6 and elapsed < 5
    criterion(1, ok, f"lambda=0 exact={exact}, lambda=0.01 blend rel err {worst_blend:.1e} "
                     f"(<= 1e-6), {elapsed:.2f}s (< 5s)")
    assert ok


# --- 2. transforms ---------------------------------------------------------------

def test_c02_transform_fidelity(criterion):
    start = time.time()
    rng = np.random.default_rng(200)
    worst_rt = worst_parseval = 0.0
    for _ in range(100):
        x = rand_complex(rng, (128, 128), np.complex64)
        k = fft2c_array(x)
        assert k.dtype == np.complex64
        back = ifft2c_array(k)
        nx = np.linalg.norm(x.astype(np.complex128))
        worst_rt = max(worst_rt, np.linalg.norm((back - x).astype(np.complex128)) / nx)
        worst_parseval = max(worst_parseval,
                             abs(np.linalg.norm(k.astype(np.complex128)) - nx) / nx)
    elapsed = time.time() - start
    ok = worst_rt <= 1e-6 and worst_parseval <= 1e-6 and elapsed < 5
    criterion(2, ok, f"32-bit round trip {worst_rt:.1e}, Parseval {worst_parseval:.1e} "
                     f"(<= 1e-6), {elapsed:.2f}s (< 5s)")
    assert ok


# --- 3. gradients ------------------------------------------------------------------

def _worst_relative_error(module, loss_fn):
    """Largest per-tensor error max|g - fd| / max|g| over all parameter tensors."""
    analytic = torch.autograd.grad(loss_fn(), list(module.parameters()))
    numeric, shrunk = finite_difference_gradients(module, loss_fn, step=1e-5)
    worst = 0.0
    for a, f in zip(analytic, numeric):
        scale = a.abs().max().item()
        err = (a - f).abs().max().item()
        worst = max(worst, err / scale if scale > 0 else err)
    return worst, shrunk


def test_c03_gradient_correctness(criterion):
    start = time.time()
    cfg = ModelConfig(n_rec=2, n_sdrdb=1, base_channels=8, growth_channels=4, se_reduction=4)
    torch.manual_seed(0)
    net = DRDNet(4, cfg).double()
    x = torch.randn(1, 4, 16, 16, dtype=torch.float64)
    y = torch.randn(1, 2, 16, 16, dtype=torch.float64)
    drd_err, drd_shrunk = _worst_relative_error(net, lambda: ((net(x) - y) ** 2).mean())

    torch.manual_seed(1)
    model = DuDoRNet(cfg).double()
    g = torch.Generator().manual_seed(2)
    x_f = torch.complex(torch.randn(1, 16, 16, generator=g, dtype=torch.float64),
                        torch.randn(1, 16, 16, generator=g, dtype=torch.float64))
    prior = torch.complex(torch.randn(1, 16, 16, generator=g, dtype=torch.float64),
                          torch.randn(1, 16, 16, generator=g, dtype=torch.float64))
    mask = (torch.rand(16, 16, generator=g) < 0.4).double()
    k_f = fft2c_t(x_f)
    k_u = k_f * mask
    tcfg = TrainConfig(model=cfg)
    loss = lambda: total_loss(model(k_u, mask, prior), x_f, k_f, tcfg)
    dudo_err, dudo_shrunk = _worst_relative_error(model, loss)
    elapsed = time.time() - start
    ok = drd_err <= 1e-5 and dudo_err <= 1e-5 and elapsed < 600
    criterion(3, ok, f"DRD-Net {drd_err:.1e}, 2-block model {dudo_err:.1e} (<= 1e-5 per tensor; "
                     f"{drd_shrunk + dudo_shrunk} kink-straddling stencils shrunk), "
                     f"{elapsed:.0f}s (< 600s)")
    assert ok


# --- 4. receptive field -----------------------------------------------------------

def test_c04_receptive_field_probe(criterion):
    start = time.time()
    sizes = {}
    for dil in ((1, 2, 4, 4), (1, 1, 1, 1)):
        torch.manual_seed(3)
        block = SDRDB(16, 8, dil, se_reduction=8).double()
        x0 = torch.randn(1, 16, 64, 64, generator=torch.Generator().manual_seed(0),
                         dtype=torch.float64)
        # the squeeze-excite gate pools globally; hold it at its unperturbed value
        gate = block.se.gate(block.local_features(x0))
        sizes[dil] = perturbation_footprint(lambda x: block(x, gate=gate), (64, 64), 16)
    elapsed = time.time() - start
    ok = sizes[(1, 2, 4, 4)] == (23, 23) and sizes[(1, 1, 1, 1)] == (9, 9) and elapsed < 60
    criterion(4, ok, f"footprint {sizes[(1, 2, 4, 4)]} for [1,2,4,4] (23x23), "
                     f"{sizes[(1, 1, 1, 1)]} for [1,1,1,1] (9x9), {elapsed:.1f}s (< 60s)")
    assert ok


# --- 5. weight sharing ---------------------------------------------------------------

def test_c05_weight_sharing(criterion):
    start = time.time()
    counts = [count_parameters(DuDoRNet(ModelConfig(n_rec=n))) for n in (1, 3, 5)]
    elapsed = time.time() - start
    ok = len(set(counts)) == 1 and elapsed < 1
    criterion(5, ok, f"parameter counts for n_rec 1/3/5: {counts}, {elapsed:.2f}s (< 1s)")
    assert ok


# --- 6. full-sampling fixed point ---------------------------------------------------

def test_c06_full_sampling_fixed_point(criterion):
    start = time.time()
    values = []
    for i in range(10):
        torch.manual_seed(600 + i)
        model = DuDoRNet(ModelConfig(n_rec=5, base_channels=16, growth_channels=8,
                                     lambda_dc=0.0)).double().eval()
        s = make_sample(PhantomSpec(H=64, W=64, seed=600 + i))
        x_f = torch.from_numpy(s.x_full.data.astype(np.complex128))[None]
        prior = torch.from_numpy(s.x_prior.data.astype(np.complex128))[None]
        with torch.no_grad():
            out = model(fft2c_t(x_f), torch.ones(64, 64, dtype=torch.float64), prior).final
        values.append(psnr(*normalized_magnitudes(out[0].numpy(), s.x_full.data)))
    elapsed = time.time() - start
    ok = all(v == 200.0 for v in values) and elapsed < 60
    criterion(6, ok, f"min PSNR over 10 random models {min(values):.1f} dB (cap 200), "
                     f"{elapsed:.1f}s (< 60s)")
    assert ok


# --- 7. mask budgets ---------------------------------------------------------------------

def test_c07_mask_budgets(criterion):
    start = time.time()
    worst, deterministic = 0.0, True
    for pattern in ("cartesian", "radial", "spiral"):
        for R in (2, 3, 4, 5, 6):
            a = make_mask(pattern, 128, 128, R, seed=R)
            worst = max(worst, abs(a.achieved_R - R) / R)
            _radial_cached.cache_clear()
            _spiral_cached.cache_clear()
            b = make_mask(pattern, 128, 128, R, seed=R)
            deterministic &= bool(np.array_equal(a.mask, b.mask))
    elapsed = time.time() - start
    ok = worst <= 0.05 and deterministic and elapsed < 60
    criterion(7, ok, f"worst relative R error {worst:.3f} (<= 0.05), deterministic={deterministic}, "
                     f"{elapsed:.1f}s (< 60s)")
    assert ok


# --- 8. overfit --------------------------------------------------------------------------

OVERFIT = TrainConfig(
    model=ModelConfig(n_rec=2, n_sdrdb=2, base_channels=16, growth_channels=8),
    steps=2000, batch_size=2, learning_rate=1e-3, seed=0, mask_mode="fixed_per_sample",
    pattern="spiral", target_R=3.0, augment=False)


@pytest.fixture(scope="module")
def overfit_run():
    samples = [make_sample(PhantomSpec(H=64, W=64, seed=sample_seed(7, i)), str(i))
               for i in range(8)]
    start = time.time()
    result = train(OVERFIT, samples)
    elapsed = time.time() - start
    sampler = BatchSampler(samples, OVERFIT)
    k_u, _, _, x_f, _ = sampler.batch(range(8))
    zp = np.mean([ssim(*normalized_magnitudes(z, r))
                  for z, r in zip(ifft2c_t(k_u).numpy(), x_f.numpy())])
    return result, mean_ssim(result.model, samples, OVERFIT), float(zp), elapsed


def test_c08_overfit(criterion, overfit_run):
    result, model_ssim, zp_ssim, elapsed = overfit_run
    ok = model_ssim >= 0.95 and model_ssim >= zp_ssim + 0.05 and elapsed <= 1800
    criterion(8, ok, f"train SSIM {model_ssim:.4f} (>= 0.95), ZP {zp_ssim:.4f} (model - ZP = "
                     f"{model_ssim - zp_ssim:.4f} >= 0.05), {elapsed / 60:.1f} min (<= 30 min)")
    assert ok


def test_c08b_overfit_loss_drop(criterion, overfit_run):
    result = overfit_run[0]
    first = np.mean([r["train_loss"] for r in result.curve[:10]])
    last = np.mean([r["train_loss"] for r in result.curve[-10:]])
    ok = last < 0.1 * first
    criterion("8b", ok, f"final/initial train loss {last / first:.4f} (< 0.1), "
                        "means of first and last 10 steps")
    assert ok


# --- 9-11. trend reproduction ---------------------------------------------------------

@pytest.fixture(scope="module")
def trends():
    return trend_study.run_study(log=lambda line: None)


def test_c09_ablation_ordering(criterion, trends):
    order = ["A", "B", "E", "H"]
    values = [trends[k]["test"] for k in order]
    gaps = [b - a for a, b in zip(values, values[1:])]
    hours = sum(trends[k]["seconds"] for k in order) / 3600
    ok = all(g >= -0.005 for g in gaps) and hours <= 4
    detail = ", ".join(f"{k} {v:.4f}" for k, v in zip(order, values))
    criterion(9, ok, f"test SSIM {detail}; gaps {', '.join(f'{g:+.4f}' for g in gaps)} "
                     f"(each >= -0.005), {hours:.2f} h (<= 4 h)")
    assert ok


def test_c10_prior_benefit(criterion, trends):
    with_prior, without = trends["H-prior"]["test"], trends["H"]["test"]
    hours = (trends["H-prior"]["seconds"] + trends["H"]["seconds"]) / 3600
    ok = with_prior - without >= -0.005 and hours <= 2
    criterion(10, ok, f"test SSIM with prior {with_prior:.4f}, without {without:.4f} "
                      f"(difference {with_prior - without:+.4f} >= -0.005), {hours:.2f} h (<= 2 h)")
    assert ok


def test_c11_recurrence_sweep(criterion, trends):
    values = [trends[f"N{n}"]["val"] for n in (1, 2, 3, 5)]
    steps = [b - a for a, b in zip(values, values[1:])]
    ok = all(s >= -0.005 for s in steps)
    criterion(11, ok, "val SSIM for n_rec 1/2/3/5: " + ", ".join(f"{v:.4f}" for v in values)
              + f"; steps {', '.join(f'{s:+.4f}' for s in steps)} (each >= -0.005)")
    assert ok


def test_c11b_trained_model_beats_zero_filling(criterion, trends):
    _, _, test_set = trend_study.dataset()
    report = evaluate(trends["H"]["model"], test_set, ["radial"], [2, 3, 4, 5, 6])
    margins = [report.aggregates("model", "radial", R)["ssim"][0]
               - report.aggregates("zp", "radial", R)["ssim"][0] for R in (2, 3, 4, 5, 6)]
    ok = min(margins) >= 0
    criterion("11b", ok, "model minus ZP test SSIM, radial R=2..6: "
                         + ", ".join(f"{m:+.4f}" for m in margins) + " (each >= 0)")
    assert ok
