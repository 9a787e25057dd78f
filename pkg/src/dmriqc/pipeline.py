"""End-to-end QC of one volume: slice both ways, score, aggregate, report.

A volume here means one gradient image; per-(view, gradient) verdicts use
the strict slice-count rule flag_count > threshold. Reports serialize to a
versioned ``report.json`` with optional flagged-slice thumbnails.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__ as _tool_version
from .volume import (
    AXIAL,
    SAGITTAL,
    DWIVolume,
    ExclusionRule,
    compute_brain_extent,
    extract_slices,
    normalize_slice,
)

REPORT_VERSION = 1


@dataclass(frozen=True)
class ThresholdConfig:
    axial_slice_count: int = 3
    sagittal_slice_count: int = 7

    def __post_init__(self):
        if self.axial_slice_count < 0 or self.sagittal_slice_count < 0:
            raise ValueError("thresholds must be >= 0")

    def for_view(self, view: str) -> int:
        return self.axial_slice_count if view == AXIAL else self.sagittal_slice_count


def volume_flag(flag_count: int, threshold: int) -> bool:
    """A volume is artifactual iff it has strictly more flagged slices than T."""
    if flag_count < 0 or threshold < 0:
        raise ValueError("counts must be >= 0")
    return flag_count > threshold


def recompute_verdicts(slices: list[dict], thresholds: ThresholdConfig) -> list[dict]:
    """Derive per-(view, gradient) verdicts from slice flags alone."""
    counts: dict[tuple[str, int], int] = {}
    for entry in slices:
        key = (entry["view"], entry["gradient"])
        counts.setdefault(key, 0)
        if entry["flag"]:
            counts[key] += 1
    return [
        {"view": view, "gradient": gradient, "flag": volume_flag(n, thresholds.for_view(view))}
        for (view, gradient), n in sorted(counts.items())
    ]


@dataclass
class QCReport:
    volume_id: str
    thresholds: ThresholdConfig
    models: dict
    slices: list[dict]
    verdicts: list[dict]
    tool_version: str = _tool_version
    created: str = ""
    # pixel data for thumbnail rendering; never serialized
    slice_pixels: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "volume_id": self.volume_id,
            "thresholds": {
                "axial": self.thresholds.axial_slice_count,
                "sagittal": self.thresholds.sagittal_slice_count,
            },
            "models": self.models,
            "slices": self.slices,
            "verdicts": self.verdicts,
            "tool_version": self.tool_version,
            "created": self.created,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QCReport":
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')!r}")
        return cls(
            volume_id=d["volume_id"],
            thresholds=ThresholdConfig(d["thresholds"]["axial"], d["thresholds"]["sagittal"]),
            models=d["models"],
            slices=d["slices"],
            verdicts=d["verdicts"],
            tool_version=d.get("tool_version", ""),
            created=d.get("created", ""),
        )


def qc_volume(
    volume: DWIVolume,
    axial_model,
    sagittal_model,
    rule: ExclusionRule = ExclusionRule(),
    thresholds: ThresholdConfig = ThresholdConfig(),
) -> QCReport:
    """Score every kept slice of both views once and assemble the report."""
    for model, view in ((axial_model, AXIAL), (sagittal_model, SAGITTAL)):
        if model.view != view:
            raise ValueError(f"{view} detector slot got a {model.view} model")
    extent = compute_brain_extent(volume)

    slice_rows: list[dict] = []
    pixels: dict = {}
    for model, view in ((axial_model, AXIAL), (sagittal_model, SAGITTAL)):
        samples = [normalize_slice(s) for s in extract_slices(volume, view, extent)]
        probs = model.predict_proba(samples)
        for sample, prob in zip(samples, probs):
            prob = float(prob)
            slice_rows.append(
                {
                    "view": view,
                    "gradient": sample.gradient_index,
                    "index": sample.slice_index,
                    "prob": prob,
                    "flag": bool(prob > 0.5),
                }
            )
            pixels[(view, sample.gradient_index, sample.slice_index)] = sample.pixels

    verdicts = recompute_verdicts(slice_rows, thresholds)
    return QCReport(
        volume_id=volume.id,
        thresholds=thresholds,
        models={
            AXIAL: {"backend": axial_model.backend, **axial_model.fingerprint},
            SAGITTAL: {"backend": sagittal_model.backend, **sagittal_model.fingerprint},
        },
        slices=slice_rows,
        verdicts=verdicts,
        created=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        slice_pixels=pixels,
    )


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def slice_to_png_bytes(pixels: np.ndarray) -> bytes:
    """Min-max scale to 8-bit grayscale PNG."""
    arr = np.asarray(pixels, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    scaled = np.zeros_like(arr) if hi <= lo else (arr - lo) / (hi - lo)
    img = Image.fromarray((scaled * 255).round().astype(np.uint8), mode="L")
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def write_report(report: QCReport, out_dir, thumbnails: bool = False) -> Path:
    """Write report.json (atomically) plus one PNG per flagged slice."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    _atomic_write(report_path, json.dumps(report.to_dict(), indent=2).encode())

    if thumbnails:
        if not report.slice_pixels:
            raise ValueError("report carries no pixel data; rerun qc_volume for thumbnails")
        for entry in report.slices:
            if not entry["flag"]:
                continue
            key = (entry["view"], entry["gradient"], entry["index"])
            png = slice_to_png_bytes(report.slice_pixels[key])
            name = f"{entry['view']}_{entry['gradient']}_{entry['index']}.png"
            _atomic_write(out_dir / name, png)
    return report_path


def read_report(path) -> QCReport:
    with open(path) as fh:
        return QCReport.from_dict(json.load(fh))
