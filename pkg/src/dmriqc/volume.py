"""Diffusion volumes and slice extraction.

A 4D acquisition is held as a ``DWIVolume``; ``extract_slices`` turns it
into per-view ``SliceSample`` lists after applying the brain-extent and
edge-trim exclusion rules, and ``normalize_slice`` standardizes pixel
intensities for the classifiers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from .errors import EmptyExtentError, EmptyResultError, LoadError
from .nifti import read_nifti

AXIAL = "axial"
SAGITTAL = "sagittal"
VIEWS = (AXIAL, SAGITTAL)

LABEL_CSV_HEADER = ["volume_id", "view", "gradient_index", "slice_index", "label"]

# std below this is treated as a constant slice
_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class DWIVolume:
    """4D diffusion image (X, Y, Z, G) with voxel geometry metadata.

    Gradient tables (bvals/bvecs) ride along when sidecar files exist but
    play no role in detection.
    """

    id: str
    data: np.ndarray
    voxel_size: np.ndarray
    affine: np.ndarray
    bvals: np.ndarray | None = None
    bvecs: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[..., np.newaxis]
        if data.ndim != 4 or any(n < 1 for n in data.shape):
            raise LoadError(f"volume {self.id!r}: bad shape {np.shape(self.data)}")
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        if bad:
            raise LoadError(f"volume {self.id!r}: {bad} non-finite voxel(s)")
        affine = np.asarray(self.affine, dtype=float)
        if affine.shape != (4, 4) or abs(np.linalg.det(affine)) < 1e-12:
            raise LoadError(f"volume {self.id!r}: affine not invertible")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "voxel_size", np.asarray(self.voxel_size, dtype=float))
        object.__setattr__(self, "affine", affine)

    @property
    def shape(self):
        return self.data.shape

    @property
    def gradient_count(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class BrainExtent:
    """Foreground mask with its tight inclusive bounding box per axis."""

    mask: np.ndarray
    bbox: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]


@dataclass(frozen=True)
class ExclusionRule:
    """Edge-trim rules applied before slices reach the detectors."""

    sagittal_edge_trim: int = 5
    axial_top_trim: int = 5
    drop_outside_brain: bool = True

    def __post_init__(self):
        if self.sagittal_edge_trim < 0 or self.axial_top_trim < 0:
            raise ValueError("trims must be >= 0")


@dataclass(frozen=True)
class SliceSample:
    """One 2D slice of one gradient image, optionally labeled."""

    volume_id: str
    view: str
    gradient_index: int
    slice_index: int
    pixels: np.ndarray
    label: int | None = None

    def __post_init__(self):
        if self.view not in VIEWS:
            raise ValueError(f"unknown view {self.view!r}")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0/1, got {self.label!r}")

    @property
    def key(self) -> tuple[str, str, int, int]:
        return (self.volume_id, self.view, self.gradient_index, self.slice_index)


def _read_gradient_sidecar(stem: Path, suffixes) -> np.ndarray | None:
    for suffix in suffixes:
        candidate = stem.with_suffix(suffix)
        if candidate.is_file():
            return np.loadtxt(candidate, ndmin=2)
    return None


def load_dwi(path) -> DWIVolume:
    """Load a NIfTI-1 file as a DWIVolume; 3D inputs become G=1."""
    path = Path(path)
    data, voxel_size, affine = read_nifti(path)
    vol_id = path.name
    for suffix in (".gz", ".nii"):
        if vol_id.endswith(suffix):
            vol_id = vol_id[: -len(suffix)]
    stem = path.parent / vol_id
    bvals = _read_gradient_sidecar(stem, (".bval", ".bvals"))
    bvecs = _read_gradient_sidecar(stem, (".bvec", ".bvecs"))
    return DWIVolume(
        id=vol_id,
        data=data,
        voxel_size=voxel_size,
        affine=affine,
        bvals=None if bvals is None else bvals.ravel(),
        bvecs=bvecs,
    )


def reference_gradient(volume: DWIVolume) -> int:
    """Index of the first b=0 image when a gradient table is present, else
    the least-attenuated (brightest-mean) gradient image."""
    if volume.bvals is not None and len(volume.bvals) == volume.gradient_count:
        b0 = np.flatnonzero(volume.bvals < 50.0)
        if b0.size:
            return int(b0[0])
    means = volume.data.reshape(-1, volume.gradient_count).mean(axis=0)
    return int(np.argmax(means))


def compute_brain_extent(volume: DWIVolume, gradient_index: int | None = None) -> BrainExtent:
    """Otsu threshold + largest connected component on one gradient image."""
    if gradient_index is None:
        gradient_index = reference_gradient(volume)
    img = volume.data[..., gradient_index]
    lo, hi = float(img.min()), float(img.max())
    if hi <= 0.0:
        raise EmptyExtentError(f"volume {volume.id!r}: gradient {gradient_index} is empty")
    if lo == hi:
        # single-class image: everything is foreground
        mask = np.ones(img.shape, dtype=bool)
    else:
        mask = img > threshold_otsu(img)
        if not mask.any():
            raise EmptyExtentError(f"volume {volume.id!r}: threshold left no voxels")
        # bridge thin gaps (slice-intensity banding) before picking a component
        mask = ndimage.binary_closing(mask, structure=np.ones((3, 3, 3), dtype=bool))
        labels, count = ndimage.label(mask)
        if count > 1:
            sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, count + 1))
            mask = labels == (int(np.argmax(sizes)) + 1)
    idx = np.nonzero(mask)
    bbox = tuple((int(ax.min()), int(ax.max())) for ax in idx)
    return BrainExtent(mask=mask, bbox=bbox)


def kept_indices(extent: BrainExtent, view: str, rule: ExclusionRule) -> list[int]:
    """Slice indices that survive the exclusion rule for a view.

    With ``drop_outside_brain`` off, trims count from the grid edges instead
    of the brain bounding box.
    """
    if view == SAGITTAL:
        if rule.drop_outside_brain:
            lo, hi = extent.bbox[0]
        else:
            lo, hi = 0, extent.mask.shape[0] - 1
        lo, hi = lo + rule.sagittal_edge_trim, hi - rule.sagittal_edge_trim
    elif view == AXIAL:
        if rule.drop_outside_brain:
            lo, hi = extent.bbox[2]
        else:
            lo, hi = 0, extent.mask.shape[2] - 1
        hi -= rule.axial_top_trim
    else:
        raise ValueError(f"unknown view {view!r}")
    if lo > hi:
        raise EmptyResultError(
            f"{view} trim exhausted the brain extent (kept range [{lo}, {hi}])"
        )
    return list(range(lo, hi + 1))


def extract_slices(
    volume: DWIVolume,
    view: str,
    extent: BrainExtent | None = None,
    rule: ExclusionRule = ExclusionRule(),
) -> list[SliceSample]:
    """All kept slices of a view, one SliceSample per (slice, gradient)."""
    if extent is None:
        extent = compute_brain_extent(volume)
    indices = kept_indices(extent, view, rule)
    samples = []
    for g in range(volume.gradient_count):
        for i in indices:
            if view == SAGITTAL:
                pixels = volume.data[i, :, :, g]
            else:
                pixels = volume.data[:, :, i, g]
            samples.append(
                SliceSample(
                    volume_id=volume.id,
                    view=view,
                    gradient_index=g,
                    slice_index=i,
                    pixels=np.ascontiguousarray(pixels),
                )
            )
    return samples


def normalize_pixels(pixels: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance pixels (population std; constant -> zeros)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    std = float(pixels.std())
    if std < _STD_FLOOR:
        return np.zeros_like(pixels)
    return (pixels - pixels.mean()) / std


def normalize_slice(sample: SliceSample) -> SliceSample:
    return replace(sample, pixels=normalize_pixels(sample.pixels))


def prepare_input(pixels: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize to ``target``, endpoints mapped corner-to-corner."""
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape
    th, tw = target
    if th < 1 or tw < 1:
        raise ValueError(f"target shape must be positive, got {target}")
    if (th, tw) == (h, w):
        return pixels.copy()
    rows = np.linspace(0, h - 1, th) if th > 1 else np.array([(h - 1) / 2])
    cols = np.linspace(0, w - 1, tw) if tw > 1 else np.array([(w - 1) / 2])
    grid = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(pixels, grid, order=1, mode="nearest")


def write_labels_csv(path, samples_or_rows) -> None:
    """Write the label CSV (header: volume_id,view,gradient_index,slice_index,label)."""
    rows = []
    for item in samples_or_rows:
        if isinstance(item, SliceSample):
            if item.label is None:
                raise ValueError(f"unlabeled slice {item.key} cannot be written")
            rows.append([*item.key, item.label])
        else:
            rows.append(list(item))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_CSV_HEADER)
        writer.writerows(rows)


def read_labels_csv(path) -> dict[tuple[str, str, int, int], int]:
    """Label lookup keyed by (volume_id, view, gradient_index, slice_index)."""
    labels: dict[tuple[str, str, int, int], int] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(LABEL_CSV_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: label CSV missing columns {sorted(missing)}")
        for row in reader:
            key = (
                row["volume_id"],
                row["view"],
                int(row["gradient_index"]),
                int(row["slice_index"]),
            )
            labels[key] = int(row["label"])
    return labels


def attach_labels(samples, labels: dict) -> list[SliceSample]:
    """Return copies of ``samples`` with labels filled from a lookup."""
    out = []
    for s in samples:
        if s.key in labels:
            out.append(replace(s, label=labels[s.key]))
        else:
            out.append(s)
    return out
