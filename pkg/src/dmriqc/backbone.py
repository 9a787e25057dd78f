"""Frozen convolutional feature backbones.

A backbone is consumed as an external weights asset (npz container) pinned
by a SHA-256 digest; it is never trained here. ``create_backbone_asset``
builds a small desk-scale backbone whose first layer is an analytic
oriented-filter bank and whose deeper layers are seeded random projections,
which is enough signal for the trainable heads on top.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ModelFormatError
from .validation import check_slice_list
from .volume import normalize_pixels, prepare_input

BACKBONE_FORMAT = 1


@dataclass(frozen=True)
class FeatureBackbone:
    """Declaration of a backbone asset: where it lives and what it computes."""

    name: str
    weights_path: str
    output_dim: int
    input_shape: tuple[int, int, int]
    weights_digest: str
    frozen: bool = True


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _gabor_patch(size: int, theta: float, wavelength: float, phase: float) -> np.ndarray:
    half = size // 2
    r = np.arange(-half, half + 1)[:, None]
    c = np.arange(-half, half + 1)[None, :]
    along = r * np.cos(theta) + c * np.sin(theta)
    sigma = 0.45 * wavelength
    patch = np.exp(-(r**2 + c**2) / (2 * sigma**2)) * np.cos(2 * np.pi * along / wavelength + phase)
    patch -= patch.mean()
    return patch / max(np.sqrt((patch**2).sum()), 1e-12)


def create_backbone_asset(path, seed: int = 0, input_size: int = 64, name: str = "smallconv") -> FeatureBackbone:
    """Write a small frozen backbone asset and return its declaration.

    Layer 1 holds 16 oriented band-pass filters (4 orientations x 2
    wavelengths x even/odd phase); layers 2 and 3 are He-initialized random
    3x3 convolutions. Deterministic given ``seed``.
    """
    rng = np.random.default_rng(seed)
    k1 = 7
    filters1 = []
    for wavelength in (4.0, 8.0):
        for o in range(4):
            theta = o * np.pi / 4
            for phase in (0.0, np.pi / 2):
                filters1.append(_gabor_patch(k1, theta, wavelength, phase))
    conv1_w = np.stack(filters1)[:, None, :, :].repeat(3, axis=1) / 3.0  # (16, 3, 7, 7)

    def he(fan_in, shape):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    conv2_w = he(16 * 9, (32, 16, 3, 3))
    conv3_w = he(32 * 9, (64, 32, 3, 3))
    meta = {
        "format": BACKBONE_FORMAT,
        "name": name,
        "seed": seed,
        "input_size": input_size,
        "output_dim": 64,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
            conv1_w=conv1_w.astype(np.float32),
            conv1_b=np.zeros(16, dtype=np.float32),
            conv2_w=conv2_w.astype(np.float32),
            conv2_b=np.zeros(32, dtype=np.float32),
            conv3_w=conv3_w.astype(np.float32),
            conv3_b=np.zeros(64, dtype=np.float32),
        )
    return FeatureBackbone(
        name=name,
        weights_path=str(path),
        output_dim=64,
        input_shape=(input_size, input_size, 3),
        weights_digest=file_digest(path),
    )


def _conv_same(img: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """(C, H, W) x (F, C, kh, kw) -> (F, H, W), zero padding."""
    f, c, kh, kw = weights.shape
    padded = np.pad(img, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    out = np.tensordot(windows, weights, axes=([0, 3, 4], [1, 2, 3]))  # (H, W, F)
    return np.moveaxis(out, -1, 0) + bias[:, None, None]


def _avg_pool2(img: np.ndarray) -> np.ndarray:
    c, h, w = img.shape
    h2, w2 = h // 2 * 2, w // 2 * 2
    v = img[:, :h2, :w2].reshape(c, h2 // 2, 2, w2 // 2, 2)
    return v.mean(axis=(2, 4))


class BackboneHandle:
    """Loaded frozen backbone: maps batches of slices to feature vectors."""

    def __init__(self, spec: FeatureBackbone):
        actual = file_digest(spec.weights_path)
        if actual != spec.weights_digest:
            raise ModelFormatError(
                f"backbone {spec.weights_path}: digest mismatch "
                f"(expected {spec.weights_digest[:12]}..., got {actual[:12]}...)"
            )
        archive = np.load(spec.weights_path)
        meta = json.loads(bytes(archive["meta"]).decode())
        if meta.get("format") != BACKBONE_FORMAT:
            raise ModelFormatError(f"unsupported backbone format {meta.get('format')!r}")
        if meta["output_dim"] != spec.output_dim:
            raise ModelFormatError(
                f"backbone output_dim {meta['output_dim']} != declared {spec.output_dim}"
            )
        self.spec = spec
        self.meta = meta
        self._layers = [
            (archive["conv1_w"].astype(np.float64), archive["conv1_b"].astype(np.float64)),
            (archive["conv2_w"].astype(np.float64), archive["conv2_b"].astype(np.float64)),
            (archive["conv3_w"].astype(np.float64), archive["conv3_b"].astype(np.float64)),
        ]

    @property
    def input_hw(self) -> tuple[int, int]:
        return self.spec.input_shape[0], self.spec.input_shape[1]

    def _forward_one(self, pixels: np.ndarray) -> np.ndarray:
        x = prepare_input(normalize_pixels(pixels), self.input_hw)
        x = np.repeat(x[None, :, :], 3, axis=0)  # grayscale -> 3 channels
        for i, (w, b) in enumerate(self._layers):
            x = np.maximum(_conv_same(x, w, b), 0.0)
            if i < len(self._layers) - 1:
                x = _avg_pool2(x)
        return x.mean(axis=(1, 2))  # global average pool

    def features(self, X) -> np.ndarray:
        slices = check_slice_list(X)
        out = np.vstack([self._forward_one(s) for s in slices])
        if out.shape[1] != self.spec.output_dim:
            raise ModelFormatError(
                f"backbone produced {out.shape[1]}-dim features, declared {self.spec.output_dim}"
            )
        return out


def load_backbone(spec: FeatureBackbone) -> BackboneHandle:
    """Open a declared backbone asset, verifying its digest and contract."""
    if not Path(spec.weights_path).exists():
        raise ModelFormatError(f"backbone weights file not found: {spec.weights_path}")
    return BackboneHandle(spec)
