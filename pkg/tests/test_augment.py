import numpy as np
import pytest

from dmriqc.augment import AffineParams, AugmentConfig, apply_affine, augment, augment_dataset, draw_params
from dmriqc.volume import SliceSample

rng = np.random.default_rng(123)


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(zoom_range=(0.0, 1.1))
    with pytest.raises(ValueError):
        AugmentConfig(max_rotation=180.0)
    with pytest.raises(ValueError):
        AugmentConfig(multiplier=-1)


def test_identity_transform():
    img = rng.normal(size=(20, 24))
    out = apply_affine(img, AffineParams())
    np.testing.assert_allclose(out, img)


def test_zero_ranges_draw_identity():
    config = AugmentConfig(
        max_translation=0, max_rotation=0, zoom_range=(1, 1), max_shear=0,
        allow_hflip=False, allow_vflip=False,
    )
    img = rng.normal(size=(16, 16))
    out, _ = augment(img, 1, config, np.random.default_rng(0))
    np.testing.assert_allclose(out, img)


def test_hflip_involution():
    img = rng.normal(size=(15, 17))
    flipped = apply_affine(img, AffineParams(hflip=True))
    np.testing.assert_allclose(flipped, img[:, ::-1], atol=1e-12)
    np.testing.assert_allclose(apply_affine(flipped, AffineParams(hflip=True)), img, atol=1e-12)


def test_vflip_involution():
    img = rng.normal(size=(14, 14))
    flipped = apply_affine(img, AffineParams(vflip=True))
    np.testing.assert_allclose(flipped, img[::-1, :], atol=1e-12)


def test_label_passes_through():
    config = AugmentConfig()
    for label in (0, 1, None):
        _, out_label = augment(rng.normal(size=(12, 12)), label, config, np.random.default_rng(1))
        assert out_label == label


def test_output_shape_preserved():
    config = AugmentConfig()
    img = rng.normal(size=(21, 33))
    out, _ = augment(img, 0, config, np.random.default_rng(2))
    assert out.shape == img.shape
    assert np.isfinite(out).all()


def _samples(n=10):
    return [
        SliceSample(f"v{i % 3}", "axial", 0, i, rng.normal(size=(12, 12)), label=i % 2)
        for i in range(n)
    ]


def test_dataset_multiplier_zero_is_identity():
    samples = _samples()
    out = augment_dataset(samples, AugmentConfig(multiplier=0), seed=0)
    assert out == samples


def test_dataset_size_and_class_ratio():
    samples = _samples(100)
    out = augment_dataset(samples, AugmentConfig(multiplier=2), seed=0)
    assert len(out) == 300
    in_ratio = np.mean([s.label for s in samples])
    out_ratio = np.mean([s.label for s in out])
    assert in_ratio == out_ratio
    # originals retained unmodified, in order
    assert out[:100] == samples


def test_dataset_deterministic_replay():
    samples = _samples(6)
    a = augment_dataset(samples, AugmentConfig(), seed=9)
    b = augment_dataset(samples, AugmentConfig(), seed=9)
    for sa, sb in zip(a, b):
        np.testing.assert_array_equal(sa.pixels, sb.pixels)
    c = augment_dataset(samples, AugmentConfig(), seed=10)
    assert any(not np.array_equal(sa.pixels, sc.pixels) for sa, sc in zip(a[6:], c[6:]))


def test_draw_params_within_bounds():
    config = AugmentConfig()
    for _ in range(50):
        p = draw_params((40, 40), config, rng)
        assert abs(p.translate[0]) <= 4.0 and abs(p.translate[1]) <= 4.0
        assert abs(p.rotation) <= 15.0
        assert 0.9 <= p.zoom <= 1.1
        assert abs(p.shear) <= 10.0
