import numpy as np
import pytest

from dmriqc.backbone import create_backbone_asset
from dmriqc.datasets import load_labeled_samples
from dmriqc.simulate import make_benchmark, write_phantom_set
from dmriqc.volume import SliceSample


@pytest.fixture(scope="session")
def backbone_spec(tmp_path_factory):
    path = tmp_path_factory.mktemp("backbone") / "smallconv.npz"
    return create_backbone_asset(path, seed=0, input_size=64)


@pytest.fixture(scope="session")
def bench_dir(tmp_path_factory):
    """Small axial-artifact benchmark shared by unit tests."""
    root = tmp_path_factory.mktemp("bench")
    clean = root / "clean"
    write_phantom_set(clean, 8, shape=(48, 48, 28), gradients=2, seed=10, prefix="unit-")
    make_benchmark(
        clean,
        root / "out",
        {"ghosting": 0.12, "herringbone": 0.06, "chemical_shift": 0.06, "susceptibility": 0.06},
        severity_range=(0.5, 0.9),
        seed=1,
    )
    return root


@pytest.fixture(scope="session")
def bench_samples(bench_dir):
    out = bench_dir / "out"
    return load_labeled_samples(out / "volumes", out / "labels.csv", "axial")


def _stripe(rng, shape=(48, 48)):
    r = np.arange(shape[0])[:, None]
    phase = rng.uniform(0, 2 * np.pi)
    img = np.sin(2 * np.pi * r / 4 + phase) * 3.0
    return img + 0.2 * rng.normal(size=shape)


def _blob(rng, shape=(48, 48)):
    r = (np.arange(shape[0])[:, None] - shape[0] / 2) / (shape[0] / 3)
    c = (np.arange(shape[1])[None, :] - shape[1] / 2) / (shape[1] / 3)
    img = np.exp(-(r**2 + c**2) / (0.5 + rng.uniform(0, 1)))
    return img + 0.05 * rng.normal(size=shape)


@pytest.fixture(scope="session")
def toy_stripe_blob():
    """Linearly separable toy set: class 1 strong stripes, class 0 smooth blobs."""
    rng = np.random.default_rng(42)
    samples = []
    for i in range(100):
        samples.append(
            SliceSample(f"toy{i % 10}", "axial", 0, i, _stripe(rng), label=1)
        )
        samples.append(
            SliceSample(f"toy{i % 10}", "axial", 1, i, _blob(rng), label=0)
        )
    return samples
