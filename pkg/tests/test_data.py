from dataclasses import replace

import numpy as np
import pytest

from dudornet.core import ConfigurationError
from dudornet.data import (PhantomSpec, augment, generate_phantom, label_map, load_split,
                           make_dataset, make_sample, read_manifest, transform_parameters)
from dudornet.evaluation import ssim
from dudornet.transforms import fft2c

SMALL = PhantomSpec(H=32, W=32, seed=3)


def test_determinism():
    a, b = generate_phantom(SMALL), generate_phantom(SMALL)
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)


def test_identical_contrasts_give_identical_images():
    spec = replace(SMALL, target_contrast=SMALL.prior_contrast)
    prior, full = generate_phantom(spec)
    assert np.array_equal(prior.data, full.data)


def test_intensity_range_and_size_check():
    prior, full = generate_phantom(PhantomSpec(H=48, W=40, seed=1))
    for f in (prior, full):
        assert f.data.shape == (48, 40)
        assert np.abs(f.data).max() <= 1.0 + 1e-6
    with pytest.raises(ConfigurationError):
        PhantomSpec(H=16, W=64)
    with pytest.raises(ConfigurationError):
        PhantomSpec(phase_amplitude=1.0)
    with pytest.raises(ConfigurationError):
        PhantomSpec(target_contrast=((0.0, 0.5), (1.0, 0.2)))


def test_shared_geometry():
    labels = label_map(SMALL)
    prior, full = generate_phantom(replace(SMALL, blur_sigma=0.0))
    for lab in np.unique(labels):
        region = labels == lab
        # one intensity per label in both contrasts
        assert np.ptp(np.abs(prior.data[region])) < 1e-6
        assert np.ptp(np.abs(full.data[region])) < 1e-6


def test_structural_correlation():
    same, other = [], []
    for i in range(32):
        p, f = generate_phantom(PhantomSpec(H=64, W=64, seed=i))
        _, g = generate_phantom(PhantomSpec(H=64, W=64, seed=1000 + i))
        same.append(ssim(np.abs(p.data), np.abs(f.data)))
        other.append(ssim(np.abs(p.data), np.abs(g.data)))
    assert np.mean(same) > np.mean(other)


def test_make_dataset(tmp_path):
    rows = make_dataset(7, 1, 2, SMALL, tmp_path / "d")
    assert len({r[0] for r in rows}) == 10
    splits = [r[1] for r in read_manifest(tmp_path / "d")]
    assert splits.count("train") == 7 and splits.count("val") == 1 and splits.count("test") == 2
    test = load_split(tmp_path / "d", "test")
    assert len(test) == 2
    for s in load_split(tmp_path / "d"):
        k = fft2c(s.x_full.data).data
        assert np.abs(s.k_full.data - k).max() <= 1e-5
    again = load_split(tmp_path / "d", "test")
    assert again[0].x_full.data.tobytes() == test[0].x_full.data.tobytes()
    with pytest.raises(FileExistsError):
        make_dataset(1, 1, 1, SMALL, tmp_path / "d")
    make_dataset(1, 1, 1, SMALL, tmp_path / "d", overwrite=True)
    assert len(read_manifest(tmp_path / "d")) == 3


def test_make_dataset_counts_checked(tmp_path):
    with pytest.raises(ConfigurationError):
        make_dataset(0, 1, 1, SMALL, tmp_path)


def test_split_seeds_are_disjoint(tmp_path):
    make_dataset(3, 2, 2, SMALL, tmp_path)
    images = [s.x_full.data.tobytes() for s in load_split(tmp_path)]
    assert len(set(images)) == len(images)


def _identity_seed():
    return next(s for s in range(1000) if transform_parameters(s) == (False, False, 0))


def test_identity_augmentation():
    s = make_sample(SMALL)
    assert augment(s, _identity_seed()) is s


def test_double_horizontal_flip():
    s = make_sample(SMALL)
    seed = next(k for k in range(1000) if transform_parameters(k) == (True, False, 0))
    twice = augment(augment(s, seed), seed)
    assert np.array_equal(twice.x_full.data, s.x_full.data)


@pytest.mark.parametrize("seed", range(8))
def test_augmentation_keeps_alignment_and_kspace(seed):
    s = make_sample(PhantomSpec(H=48, W=48, seed=seed))
    a = augment(s, seed)
    before = ssim(np.abs(s.x_prior.data), np.abs(s.x_full.data))
    after = ssim(np.abs(a.x_prior.data), np.abs(a.x_full.data))
    assert abs(before - after) <= 1e-6
    assert np.abs(a.k_full.data - fft2c(a.x_full.data).data).max() <= 1e-5


def test_free_angle_rotation():
    s = make_sample(SMALL)
    a = augment(s, 0, free_angle=17.0)
    assert a.x_full.data.shape == s.x_full.data.shape
    assert np.abs(a.k_full.data - fft2c(a.x_full.data).data).max() <= 1e-5
    assert not np.allclose(a.x_full.data, s.x_full.data)
