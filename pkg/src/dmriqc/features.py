"""Classical texture descriptors: Gabor bank, Zernike moments, LBP histograms.

Functional extractors plus thin sklearn-style transformer wrappers so the
descriptors drop into pipelines next to the classifiers. Convolutions use
symmetric (reflect) boundary padding throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy import fft as sfft
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import check_pixels, check_slice_list


@dataclass(frozen=True)
class GaborConfig:
    n_scales: int = 4
    n_orientations: int = 4
    base_wavelength: float = 4.0
    scale_factor: float = 2.0
    sigma_ratio: float = 0.56
    zero_dc: bool = True

    def __post_init__(self):
        if self.n_scales < 1 or self.n_orientations < 1:
            raise ValueError("n_scales and n_orientations must be >= 1")

    @property
    def dim(self) -> int:
        return 2 * self.n_scales * self.n_orientations


@dataclass(frozen=True)
class ZernikeConfig:
    max_order: int = 4

    def __post_init__(self):
        if self.max_order < 0:
            raise ValueError("max_order must be >= 0")

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(
            (n, m)
            for n in range(self.max_order + 1)
            for m in range(n % 2, n + 1, 2)
        )

    @property
    def dim(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class LbpConfig:
    neighbors: int = 8
    radius: float = 1.0

    def __post_init__(self):
        if self.neighbors < 4:
            raise ValueError("neighbors must be >= 4")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self) -> int:
        return self.neighbors + 2


# ---------------------------------------------------------------------------
# Gabor
# ---------------------------------------------------------------------------

def gabor_kernel(wavelength: float, theta: float, sigma: float, zero_dc: bool = True) -> np.ndarray:
    """Complex Gabor kernel with isotropic Gaussian envelope, unit L2 norm."""
    radius = int(np.ceil(3.0 * sigma))
    r = np.arange(-radius, radius + 1)[:, None]
    c = np.arange(-radius, radius + 1)[None, :]
    along = r * np.cos(theta) + c * np.sin(theta)
    envelope = np.exp(-(r**2 + c**2) / (2.0 * sigma**2))
    kernel = envelope * np.exp(1j * 2.0 * np.pi * along / wavelength)
    if zero_dc:
        kernel = kernel - kernel.mean()
    norm = np.sqrt(np.sum(np.abs(kernel) ** 2))
    return kernel / norm


def gabor_bank(config: GaborConfig = GaborConfig()) -> list[np.ndarray]:
    """Kernels ordered scale-major: (s0,o0), (s0,o1), ... (s1,o0), ..."""
    kernels = []
    for s in range(config.n_scales):
        wavelength = config.base_wavelength * config.scale_factor**s
        sigma = config.sigma_ratio * wavelength
        for o in range(config.n_orientations):
            theta = o * np.pi / config.n_orientations
            kernels.append(gabor_kernel(wavelength, theta, sigma, config.zero_dc))
    return kernels


def convolve_reflect(pixels: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2D convolution with symmetric boundary padding, output same size."""
    ph, pw = kernel.shape[0] // 2, kernel.shape[1] // 2
    padded = np.pad(pixels, ((ph, ph), (pw, pw)), mode="symmetric")
    fh = sfft.next_fast_len(padded.shape[0] + kernel.shape[0] - 1)
    fw = sfft.next_fast_len(padded.shape[1] + kernel.shape[1] - 1)
    spec = sfft.fft2(padded, s=(fh, fw)) * sfft.fft2(kernel, s=(fh, fw))
    full = sfft.ifft2(spec)
    out = full[2 * ph : 2 * ph + pixels.shape[0], 2 * pw : 2 * pw + pixels.shape[1]]
    return out if np.iscomplexobj(kernel) else np.real(out)


class GaborBank:
    """Precomputed filter bank with a per-image-shape FFT cache."""

    def __init__(self, config: GaborConfig = GaborConfig()):
        self.config = config
        self.kernels = gabor_bank(config)
        self._pad = max(k.shape[0] // 2 for k in self.kernels)
        self._cache: dict[tuple[int, int], list[np.ndarray]] = {}

    def _kernel_ffts(self, fshape: tuple[int, int]) -> list[np.ndarray]:
        if fshape not in self._cache:
            self._cache[fshape] = [sfft.fft2(k, s=fshape) for k in self.kernels]
        return self._cache[fshape]

    def magnitudes(self, pixels: np.ndarray) -> np.ndarray:
        """|response| of every kernel, stacked (n_kernels, H, W)."""
        pixels = check_pixels(pixels)
        p = self._pad
        padded = np.pad(pixels, p, mode="symmetric")
        kmax = 2 * p + 1
        fshape = (
            sfft.next_fast_len(padded.shape[0] + kmax - 1),
            sfft.next_fast_len(padded.shape[1] + kmax - 1),
        )
        img_fft = sfft.fft2(padded, s=fshape)
        out = np.empty((len(self.kernels),) + pixels.shape)
        for i, (kern, kfft) in enumerate(zip(self.kernels, self._kernel_ffts(fshape))):
            full = sfft.ifft2(img_fft * kfft)
            kh, kw = kern.shape
            r0 = p + kh // 2
            c0 = p + kw // 2
            out[i] = np.abs(full[r0 : r0 + pixels.shape[0], c0 : c0 + pixels.shape[1]])
        return out

    def features(self, pixels: np.ndarray) -> np.ndarray:
        """Per kernel (mean, std) of the response magnitude, interleaved."""
        mags = self.magnitudes(pixels)
        feats = np.empty(2 * len(self.kernels))
        feats[0::2] = mags.mean(axis=(1, 2))
        feats[1::2] = mags.std(axis=(1, 2))
        assert feats.shape[0] == self.config.dim
        return feats


def gabor_features(pixels: np.ndarray, config: GaborConfig = GaborConfig()) -> np.ndarray:
    return GaborBank(config).features(pixels)


# ---------------------------------------------------------------------------
# Zernike
# ---------------------------------------------------------------------------

def _radial_poly(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    for s in range((n - m) // 2 + 1):
        coeff = (
            (-1) ** s
            * factorial(n - s)
            / (factorial(s) * factorial((n + m) // 2 - s) * factorial((n - m) // 2 - s))
        )
        out += coeff * rho ** (n - 2 * s)
    return out


_ZERNIKE_CACHE: dict[tuple[int, int], tuple[np.ndarray, list[np.ndarray]]] = {}


def _zernike_basis(size: int, config: ZernikeConfig):
    key = (size, config.max_order)
    if key not in _ZERNIKE_CACHE:
        center = (size - 1) / 2.0
        radius = (size - 1) / 2.0
        # integrate the basis over an 8x8 subgrid per pixel so the discrete
        # projection keeps the continuous orthogonality (boundary pixels
        # contribute exactly their disk-clipped share)
        ss = 8
        offsets = (np.arange(ss) + 0.5) / ss - 0.5
        basis = [np.zeros((size, size), dtype=complex) for _ in config.pairs]
        support = np.zeros((size, size), dtype=bool)
        for dr in offsets:
            for dc in offsets:
                r = (np.arange(size)[:, None] + dr - center) / radius
                c = (np.arange(size)[None, :] + dc - center) / radius
                rho = np.hypot(r, c)
                theta = np.arctan2(np.broadcast_to(c, rho.shape), np.broadcast_to(r, rho.shape))
                disk = rho <= 1.0
                support |= disk
                for i, (n, m) in enumerate(config.pairs):
                    basis[i] += _radial_poly(n, m, rho) * np.exp(-1j * m * theta) * disk
        area = (1.0 / radius) ** 2
        scale = area / ss**2
        basis = [zb * ((n + 1) / np.pi) * scale for zb, (n, m) in zip(basis, config.pairs)]
        _ZERNIKE_CACHE[key] = (support, basis)
    return _ZERNIKE_CACHE[key]


def _to_square(pixels: np.ndarray) -> np.ndarray:
    h, w = pixels.shape
    if h == w:
        return pixels
    size = max(h, w)
    out = np.zeros((size, size), dtype=pixels.dtype)
    r0 = (size - h) // 2
    c0 = (size - w) // 2
    out[r0 : r0 + h, c0 : c0 + w] = pixels
    return out


def zernike_features(pixels: np.ndarray, config: ZernikeConfig = ZernikeConfig()) -> np.ndarray:
    """Zernike moment magnitudes |A(n, m)| for n <= max_order, n - m even."""
    pixels = _to_square(check_pixels(pixels))
    if pixels.shape[0] < 3:
        raise ValueError("image too small for a unit-disk projection")
    _, basis = _zernike_basis(pixels.shape[0], config)
    feats = np.array([np.abs(np.sum(pixels * zb)) for zb in basis])
    assert feats.shape[0] == config.dim
    return feats


# ---------------------------------------------------------------------------
# LBP
# ---------------------------------------------------------------------------

def lbp_features(pixels: np.ndarray, config: LbpConfig = LbpConfig()) -> np.ndarray:
    """Uniform rotation-invariant LBP histogram over interior pixels.

    Neighbors are bilinearly sampled on a circle of the configured radius;
    ties (neighbor == center) count as 1. Codes with more than two 0/1
    circular transitions share the last bin. The histogram sums to 1.
    """
    pixels = check_pixels(pixels)
    p_count, radius = config.neighbors, config.radius
    margin = int(np.ceil(radius))
    if min(pixels.shape) < 2 * margin + 1:
        raise ValueError(f"image smaller than the {2 * margin + 1}px LBP footprint")
    center = pixels[margin:-margin, margin:-margin]
    h, w = center.shape

    bits = np.empty((p_count, h, w), dtype=bool)
    for p in range(p_count):
        angle = 2.0 * np.pi * p / p_count
        dr = -radius * np.sin(angle)
        dc = radius * np.cos(angle)
        # snap to the grid where the circle hits it exactly, so ties stay ties
        if abs(dr - round(dr)) < 1e-9:
            dr = float(round(dr))
        if abs(dc - round(dc)) < 1e-9:
            dc = float(round(dc))
        r0, c0 = int(np.floor(dr)), int(np.floor(dc))
        # keep the +1 block inside the margin when the offset is exactly integral
        if r0 + 1 > margin:
            r0 -= 1
        if c0 + 1 > margin:
            c0 -= 1
        fr, fc = dr - r0, dc - c0
        base_r, base_c = margin + r0, margin + c0
        block = lambda ro, co: pixels[base_r + ro : base_r + ro + h, base_c + co : base_c + co + w]
        neighbor = (
            (1 - fr) * (1 - fc) * block(0, 0)
            + (1 - fr) * fc * block(0, 1)
            + fr * (1 - fc) * block(1, 0)
            + fr * fc * block(1, 1)
        )
        bits[p] = neighbor >= center

    transitions = np.zeros((h, w), dtype=int)
    for p in range(p_count):
        transitions += bits[p] != bits[(p + 1) % p_count]
    ones = bits.sum(axis=0)
    codes = np.where(transitions <= 2, ones, p_count + 1)

    hist = np.bincount(codes.ravel(), minlength=p_count + 2).astype(float)
    hist /= hist.sum()
    assert hist.shape[0] == config.dim
    return hist


# ---------------------------------------------------------------------------
# estimator-style wrappers
# ---------------------------------------------------------------------------

class _SliceTransformer(BaseEstimator, TransformerMixin):
    """Stateless slice-to-feature transformer; fit is a no-op."""

    def fit(self, X, y=None):
        check_slice_list(X)
        return self

    def transform(self, X) -> np.ndarray:
        slices = check_slice_list(X)
        return np.vstack([self._extract(s) for s in slices])

    def _extract(self, pixels: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


class GaborFeatures(_SliceTransformer):
    def __init__(self, config: GaborConfig = GaborConfig()):
        self.config = config
        self._bank = GaborBank(config)

    def _extract(self, pixels):
        return self._bank.features(pixels)


class ZernikeFeatures(_SliceTransformer):
    def __init__(self, config: ZernikeConfig = ZernikeConfig()):
        self.config = config

    def _extract(self, pixels):
        return zernike_features(pixels, self.config)


class LbpFeatures(_SliceTransformer):
    def __init__(self, config: LbpConfig = LbpConfig()):
        self.config = config

    def _extract(self, pixels):
        return lbp_features(pixels, self.config)


DESCRIPTORS = {
    "gabor": (GaborConfig, GaborFeatures),
    "zernike": (ZernikeConfig, ZernikeFeatures),
    "lbp": (LbpConfig, LbpFeatures),
}


def save_feature_cache(path, matrix: np.ndarray, descriptor: str, config, row_keys) -> None:
    """Persist a feature matrix (.npy) with a JSON sidecar.

    The sidecar records the descriptor, its configuration, and the
    slice key for each matrix row, so cached features are self-describing.
    """
    import dataclasses
    import json
    from pathlib import Path

    path = Path(path)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(row_keys):
        raise ValueError(f"matrix shape {matrix.shape} does not match {len(row_keys)} row keys")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, matrix)
    sidecar = {
        "version": 1,
        "descriptor": descriptor,
        "config": dataclasses.asdict(config),
        "dim": matrix.shape[1],
        "rows": [list(k) for k in row_keys],
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_feature_cache(path):
    """Read a cached feature matrix; returns (matrix, sidecar dict)."""
    import json
    from pathlib import Path

    path = Path(path)
    matrix = np.load(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    if sidecar.get("version") != 1:
        raise ValueError(f"unsupported feature cache version {sidecar.get('version')!r}")
    if matrix.shape != (len(sidecar["rows"]), sidecar["dim"]):
        raise ValueError(f"cache {path}: matrix shape {matrix.shape} disagrees with sidecar")
    return matrix, sidecar


def make_extractor(descriptor: str, config=None) -> _SliceTransformer:
    if descriptor not in DESCRIPTORS:
        raise ValueError(f"unknown descriptor {descriptor!r}")
    cfg_cls, est_cls = DESCRIPTORS[descriptor]
    return est_cls(config if config is not None else cfg_cls())
