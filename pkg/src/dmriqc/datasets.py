"""Assembling labeled slice datasets from volume directories and label CSVs."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .volume import (
    ExclusionRule,
    SliceSample,
    attach_labels,
    compute_brain_extent,
    extract_slices,
    load_dwi,
    read_labels_csv,
)


def list_volume_paths(volumes_dir) -> list[Path]:
    volumes_dir = Path(volumes_dir)
    if not volumes_dir.is_dir():
        raise ConfigError(f"volume directory not found: {volumes_dir}")
    return sorted(p for p in volumes_dir.iterdir() if p.name.endswith((".nii", ".nii.gz")))


def load_labeled_samples(
    volumes_dir,
    labels_csv,
    view: str,
    rule: ExclusionRule = ExclusionRule(),
    require_labels: bool = True,
) -> list[SliceSample]:
    """Extract one view from every volume and join on the label CSV."""
    labels_csv = Path(labels_csv)
    if not labels_csv.is_file():
        raise ConfigError(f"label CSV not found: {labels_csv}")
    labels = read_labels_csv(labels_csv)
    samples: list[SliceSample] = []
    for path in list_volume_paths(volumes_dir):
        volume = load_dwi(path)
        extent = compute_brain_extent(volume)
        extracted = attach_labels(extract_slices(volume, view, extent, rule), labels)
        if require_labels:
            extracted = [s for s in extracted if s.label is not None]
        samples.extend(extracted)
    if not samples:
        raise ConfigError(f"no labeled {view} slices found under {volumes_dir}")
    return samples
