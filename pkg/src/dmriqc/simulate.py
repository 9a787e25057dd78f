"""K-space and slice-domain artifact injection, phantoms, and benchmarks.

Each injector implements the textbook physical mechanism of one artifact
class (alternating-line gain for Nyquist ghosts, a conjugate k-space spike
pair for herringbone stripes, and so on). ``make_benchmark`` applies them
to clean volumes with per-volume RNG streams and records exact ground
truth, so detector training and evaluation run on data with known labels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import SimulationError
from .nifti import write_nifti
from .validation import check_pixels
from .volume import (
    AXIAL,
    SAGITTAL,
    DWIVolume,
    ExclusionRule,
    compute_brain_extent,
    kept_indices,
    load_dwi,
    write_labels_csv,
)

AXIAL_KINDS = ("herringbone", "chemical_shift", "susceptibility", "ghosting")
SAGITTAL_KINDS = ("motion", "multiband")
ALL_KINDS = AXIAL_KINDS + SAGITTAL_KINDS

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ArtifactSpec:
    """One artifact event: what to inject, how strongly, and with which stream."""

    kind: str
    severity: float
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise SimulationError(f"unknown artifact kind {self.kind!r}")
        if not 0.0 < self.severity <= 1.0:
            raise SimulationError(f"severity must be in (0, 1], got {self.severity}")

    @property
    def label_view(self) -> str:
        return AXIAL if self.kind in AXIAL_KINDS else SAGITTAL


@dataclass
class BenchmarkManifest:
    entries: list[dict]
    clean_count: int
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "clean_count": self.clean_count,
            "entries": self.entries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkManifest":
        if d.get("version") != MANIFEST_VERSION:
            raise SimulationError(f"unsupported manifest version {d.get('version')!r}")
        return cls(entries=d["entries"], clean_count=d["clean_count"], seed=d["seed"])


# ---------------------------------------------------------------------------
# slice-domain injectors (axial-class artifacts)
# ---------------------------------------------------------------------------

def inject_ghosting(pixels: np.ndarray, alpha: float) -> np.ndarray:
    """Nyquist ghost: odd k-space rows scaled by (1-alpha), even by (1+alpha).

    For an even row count this equals in + alpha * circular row shift by N/2.
    """
    pixels = check_pixels(pixels)
    if not np.isfinite(alpha):
        raise SimulationError("alpha must be finite")
    if alpha == 0.0:
        return pixels.copy()
    k = np.fft.fft2(pixels)
    k[0::2, :] *= 1.0 + alpha
    k[1::2, :] *= 1.0 - alpha
    return np.real(np.fft.ifft2(k))


def inject_herringbone(
    pixels: np.ndarray,
    spike: tuple[int, int],
    amplitude: float,
    phase: float = 0.0,
) -> np.ndarray:
    """Spurious k-space spike pair: adds a plane-wave stripe pattern."""
    pixels = check_pixels(pixels)
    ku, kv = int(spike[0]), int(spike[1])
    if (ku, kv) == (0, 0):
        raise SimulationError("herringbone spike frequency must be nonzero")
    rows, cols = pixels.shape
    r = np.arange(rows)[:, None]
    c = np.arange(cols)[None, :]
    stripe = np.cos(2.0 * np.pi * (ku * r / rows + kv * c / cols) + phase)
    return pixels + amplitude * stripe


def herringbone_amplitude(pixels: np.ndarray, severity: float) -> float:
    """Amplitude giving a stripe peak-to-peak of severity x dynamic range."""
    rng = float(np.max(pixels) - np.min(pixels))
    return 0.5 * severity * rng


def inject_chemical_shift(
    pixels: np.ndarray,
    shift_px: int,
    rim_threshold: float = 0.9,
    blend: float = 0.6,
) -> np.ndarray:
    """Displace the bright rim along the frequency-encode (column) axis."""
    pixels = check_pixels(pixels)
    shift_px = int(shift_px)
    if abs(shift_px) < 1:
        raise SimulationError("chemical shift requires |shift_px| >= 1")
    threshold = np.quantile(pixels, rim_threshold)
    mask = pixels > threshold
    if not mask.any():
        return pixels.copy()
    shifted_vals = np.zeros_like(pixels)
    shifted_mask = np.zeros_like(mask)
    if shift_px > 0:
        shifted_vals[:, shift_px:] = pixels[:, :-shift_px]
        shifted_mask[:, shift_px:] = mask[:, :-shift_px]
    else:
        shifted_vals[:, :shift_px] = pixels[:, -shift_px:]
        shifted_mask[:, :shift_px] = mask[:, -shift_px:]
    out = pixels.copy()
    out[shifted_mask] = (1.0 - blend) * pixels[shifted_mask] + blend * shifted_vals[shifted_mask]
    return out


def inject_susceptibility(
    pixels: np.ndarray,
    center: tuple[int, int],
    radius: int,
    warp_scale: float,
    severity: float = 0.0,
) -> np.ndarray:
    """Local geometric warp plus signal dropout inside a disk.

    The displacement is radial with magnitude warp_scale * (r/s) *
    exp((1 - (r/s)^2) / 2), s = radius/2: zero at the disk center, peak
    warp_scale at r = s, decaying smoothly outward.
    """
    pixels = check_pixels(pixels)
    radius = int(radius)
    if radius < 2:
        raise SimulationError("susceptibility disk radius must be >= 2")
    rows, cols = pixels.shape
    cr, cc = int(center[0]), int(center[1])
    if not (radius <= cr < rows - radius and radius <= cc < cols - radius):
        raise SimulationError(
            f"susceptibility disk (center {center}, radius {radius}) leaves {rows}x{cols} bounds"
        )
    r = np.arange(rows)[:, None] - cr
    c = np.arange(cols)[None, :] - cc
    dist = np.hypot(r, c)
    inside = dist <= radius

    if warp_scale != 0.0:
        s = radius / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            mag = warp_scale * (dist / s) * np.exp(0.5 * (1.0 - (dist / s) ** 2))
            unit_r = np.where(dist > 0, r / np.maximum(dist, 1e-12), 0.0)
            unit_c = np.where(dist > 0, c / np.maximum(dist, 1e-12), 0.0)
        src_r = np.broadcast_to(np.arange(rows)[:, None] - mag * unit_r, pixels.shape)
        src_c = np.broadcast_to(np.arange(cols)[None, :] - mag * unit_c, pixels.shape)
        warped = ndimage.map_coordinates(pixels, [src_r, src_c], order=1, mode="nearest")
        out = np.where(inside, warped, pixels)
    else:
        out = pixels.copy()
    if severity > 0.0:
        out[inside] *= 1.0 - 0.5 * severity
    return out


# ---------------------------------------------------------------------------
# volume-level injectors (sagittal-class artifacts)
# ---------------------------------------------------------------------------

def _sagittal_labels(volume, rule, extent=None):
    if extent is None:
        extent = compute_brain_extent(volume)
    return kept_indices(extent, SAGITTAL, rule), extent


def inject_motion(
    volume: DWIVolume,
    gradient_index: int,
    band_period: int,
    attenuation: float,
    rule: ExclusionRule = ExclusionRule(),
    extent=None,
) -> tuple[DWIVolume, list[int]]:
    """Interleaved slice-intensity banding (venetian-blind motion signature).

    Axial slices z = 0 (mod band_period) within the brain bbox are dimmed by
    (1 - attenuation); every kept sagittal slice of that gradient is marked.
    """
    if band_period < 2:
        raise SimulationError("motion band_period must be >= 2")
    if not 0.0 <= attenuation < 1.0:
        raise SimulationError("attenuation must be in [0, 1)")
    if attenuation == 0.0:
        return volume, []
    affected, extent = _sagittal_labels(volume, rule, extent)
    z_lo, z_hi = extent.bbox[2]
    data = volume.data.copy()
    for z in range(z_lo, z_hi + 1):
        if z % band_period == 0:
            data[:, :, z, gradient_index] *= 1.0 - attenuation
    out = DWIVolume(id=volume.id, data=data, voxel_size=volume.voxel_size, affine=volume.affine)
    return out, affected


def inject_multiband(
    volume: DWIVolume,
    gradient_index: int,
    mb_period: int,
    gain: float,
    rule: ExclusionRule = ExclusionRule(),
    extent=None,
) -> tuple[DWIVolume, list[int]]:
    """Periodic slice-group gain: slice z scaled by 1 + gain*sign(sin(2 pi z / period))."""
    if mb_period < 2:
        raise SimulationError("multiband period must be >= 2")
    if gain == 0.0:
        return volume, []
    affected, _ = _sagittal_labels(volume, rule, extent)
    data = volume.data.copy()
    z = np.arange(data.shape[2])
    scale = 1.0 + gain * np.sign(np.sin(2.0 * np.pi * z / mb_period))
    data[:, :, :, gradient_index] *= scale[None, None, :]
    out = DWIVolume(id=volume.id, data=data, voxel_size=volume.voxel_size, affine=volume.affine)
    return out, affected


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

def make_phantom(
    volume_id: str,
    shape: tuple[int, int, int] = (48, 48, 28),
    gradients: int = 4,
    seed: int = 0,
    noise: float = 0.02,
    texture: float = 0.15,
) -> DWIVolume:
    """Synthetic brain-like volume: smooth ellipsoid with internal texture.

    Gradient 0 plays the b=0 role (brightest); weighted gradients are dimmed
    with direction-dependent modulation. Values are in arbitrary units with
    background near zero.
    """
    rng = np.random.default_rng(seed)
    nx, ny, nz = shape
    x = np.linspace(-1, 1, nx)[:, None, None]
    y = np.linspace(-1, 1, ny)[None, :, None]
    z = np.linspace(-1, 1, nz)[None, None, :]
    r2 = (x / 0.78) ** 2 + (y / 0.85) ** 2 + (z / 0.82) ** 2
    body = np.clip(1.0 - r2, 0.0, None) ** 0.5

    smooth = ndimage.gaussian_filter(rng.normal(size=shape), sigma=3.0)
    smooth /= max(np.abs(smooth).max(), 1e-12)
    base = body * (1.0 + texture * smooth)

    data = np.empty(shape + (gradients,))
    for g in range(gradients):
        gain = 1.0 if g == 0 else 0.55 + 0.1 * np.cos(2.0 * np.pi * g / max(gradients - 1, 1))
        grad_tex = ndimage.gaussian_filter(rng.normal(size=shape), sigma=2.0)
        grad_tex /= max(np.abs(grad_tex).max(), 1e-12)
        img = base * gain * (1.0 + 0.5 * texture * grad_tex)
        img = img + noise * rng.normal(size=shape) * (body > 0)
        data[..., g] = np.clip(img, 0.0, None) * 100.0
    return DWIVolume(id=volume_id, data=data, voxel_size=np.array([2.0, 2.0, 2.0]), affine=np.diag([2.0, 2.0, 2.0, 1.0]))


def write_phantom_set(
    out_dir,
    count: int,
    shape: tuple[int, int, int] = (48, 48, 28),
    gradients: int = 4,
    seed: int = 0,
    noise: float = 0.02,
    prefix: str = "phantom",
) -> list[Path]:
    """Write ``count`` clean phantom volumes as NIfTI files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        vol = make_phantom(f"{prefix}{i:03d}", shape=shape, gradients=gradients, seed=seed + i, noise=noise)
        path = out_dir / f"{vol.id}.nii.gz"
        write_nifti(path, vol.data, vol.voxel_size, vol.affine)
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# benchmark generation
# ---------------------------------------------------------------------------

def _volume_rng(seed: int, volume_id: str) -> np.random.Generator:
    # per-volume stream: stable across volume ordering and parallel workers
    digest = hashlib.sha256(volume_id.encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def _apply_axial_artifact(kind, pixels, severity, rng):
    if kind == "ghosting":
        return inject_ghosting(pixels, alpha=float(severity))
    if kind == "herringbone":
        rows, cols = pixels.shape
        ku = int(rng.integers(3, max(4, rows // 3)))
        kv = int(rng.integers(3, max(4, cols // 3)))
        amp = herringbone_amplitude(pixels, severity)
        return inject_herringbone(pixels, (ku, kv), amp, phase=float(rng.uniform(0, 2 * np.pi)))
    if kind == "chemical_shift":
        shift = int(np.clip(round(1 + 3 * severity), 1, pixels.shape[1] - 1))
        return inject_chemical_shift(pixels, shift_px=shift)
    if kind == "susceptibility":
        rows, cols = pixels.shape
        radius = int(np.clip(round(min(rows, cols) * (0.12 + 0.13 * severity)), 3, min(rows, cols) // 2 - 1))
        cr = int(rng.integers(radius, rows - radius))
        cc = int(rng.integers(radius, cols - radius))
        warp = 1.0 + 3.0 * severity
        return inject_susceptibility(pixels, (cr, cc), radius, warp_scale=warp, severity=severity)
    raise SimulationError(f"{kind!r} is not an axial artifact")


def _select_count(fraction: float, total: int) -> int:
    return int(np.floor(fraction * total + 0.5))


def make_benchmark(
    clean_dir,
    out_dir,
    mix: dict[str, float],
    severity_range: tuple[float, float] = (0.4, 0.8),
    seed: int = 0,
    rule: ExclusionRule = ExclusionRule(),
) -> BenchmarkManifest:
    """Corrupt a directory of clean volumes and write labels + manifest.

    ``mix`` maps artifact kind to the fraction of kept axial slices (axial
    kinds) or gradient images (sagittal kinds) to corrupt per volume.
    Deterministic given ``seed``; per-volume streams are derived from
    (seed, volume_id).
    """
    clean_dir, out_dir = Path(clean_dir), Path(out_dir)
    for kind, frac in mix.items():
        if kind not in ALL_KINDS:
            raise SimulationError(f"unknown artifact kind {kind!r}")
        if not 0.0 <= frac <= 1.0:
            raise SimulationError(f"mix fraction for {kind!r} must be in [0, 1]")
    lo, hi = severity_range
    if not (0.0 < lo <= hi <= 1.0):
        raise SimulationError(f"severity range must satisfy 0 < lo <= hi <= 1, got {severity_range}")

    paths = sorted(p for p in clean_dir.iterdir() if p.name.endswith((".nii", ".nii.gz")))
    if not paths:
        raise SimulationError(f"no NIfTI volumes found in {clean_dir}")

    vol_dir = out_dir / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    label_rows = []
    clean_count = 0

    for path in paths:
        volume = load_dwi(path)
        rng = _volume_rng(seed, volume.id)
        extent = compute_brain_extent(volume)
        ax_idx = kept_indices(extent, AXIAL, rule)
        sag_idx = kept_indices(extent, SAGITTAL, rule)
        g_count = volume.gradient_count

        data = volume.data.copy()
        affected_axial: set[tuple[int, int]] = set()
        affected_sagittal: set[tuple[int, int]] = set()
        kinds_applied = []

        for kind in AXIAL_KINDS:
            frac = mix.get(kind, 0.0)
            if frac <= 0.0:
                continue
            cells = [(g, z) for g in range(g_count) for z in ax_idx]
            n_sel = min(_select_count(frac, len(cells)), len(cells))
            if n_sel == 0:
                continue
            chosen = rng.choice(len(cells), size=n_sel, replace=False)
            hit_any = False
            for ci in sorted(int(i) for i in chosen):
                g, z = cells[ci]
                severity = float(rng.uniform(lo, hi))
                before = data[:, :, z, g]
                after = _apply_axial_artifact(kind, before, severity, rng)
                if np.max(np.abs(after - before)) > 1e-9:
                    data[:, :, z, g] = after
                    affected_axial.add((g, z))
                    hit_any = True
            if hit_any:
                kinds_applied.append(kind)

        volume = DWIVolume(id=volume.id, data=data, voxel_size=volume.voxel_size, affine=volume.affine)

        for kind in SAGITTAL_KINDS:
            frac = mix.get(kind, 0.0)
            if frac <= 0.0:
                continue
            n_sel = min(_select_count(frac, g_count), g_count)
            if n_sel == 0:
                continue
            chosen = sorted(int(g) for g in rng.choice(g_count, size=n_sel, replace=False))
            for g in chosen:
                severity = float(rng.uniform(lo, hi))
                if kind == "motion":
                    period = int(rng.choice([2, 3, 4]))
                    atten = float(np.clip(0.3 + 0.6 * severity, 0.0, 0.95))
                    volume, marked = inject_motion(volume, g, period, atten, rule=rule, extent=extent)
                else:
                    period = int(rng.choice([4, 6]))
                    gain = 0.2 + 0.6 * severity
                    volume, marked = inject_multiband(volume, g, period, gain, rule=rule, extent=extent)
                affected_sagittal.update((g, i) for i in marked)
            if chosen:
                kinds_applied.append(kind)

        out_path = vol_dir / f"{volume.id}.nii.gz"
        write_nifti(out_path, volume.data, volume.voxel_size, volume.affine)

        # label exactly the slices a consumer of the corrupted volume will
        # extract; artifacts can widen the foreground mask (ghost replicas)
        final_extent = compute_brain_extent(volume)
        final_ax = kept_indices(final_extent, AXIAL, rule)
        final_sag = kept_indices(final_extent, SAGITTAL, rule)
        motion_gradients = {g for g, _ in affected_sagittal}
        affected_sagittal = {(g, i) for g in motion_gradients for i in final_sag}

        for g in range(g_count):
            for z in final_ax:
                label_rows.append([volume.id, AXIAL, g, z, int((g, z) in affected_axial)])
            for i in final_sag:
                label_rows.append([volume.id, SAGITTAL, g, i, int((g, i) in affected_sagittal)])

        if not kinds_applied:
            clean_count += 1
        entries.append(
            {
                "volume_id": volume.id,
                "kinds": kinds_applied,
                "affected": {
                    AXIAL: sorted([g, z] for g, z in affected_axial),
                    SAGITTAL: sorted([g, i] for g, i in affected_sagittal),
                },
                "seed": seed,
            }
        )

    manifest = BenchmarkManifest(entries=entries, clean_count=clean_count, seed=seed)
    write_labels_csv(out_dir / "labels.csv", label_rows)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
    return manifest


def read_manifest(path) -> BenchmarkManifest:
    with open(path) as fh:
        return BenchmarkManifest.from_dict(json.load(fh))
