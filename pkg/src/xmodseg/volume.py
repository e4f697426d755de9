"""Volume containers, NIfTI I/O, and the deterministic preprocessing steps:
voxel-size resampling, min-max intensity normalization, and center crop/pad.

Arrays are indexed (x, y, z) with shape (W, H, D); spacing is (sx, sy, sz)
in mm. Spacing components are stored at float32 precision, matching what a
NIfTI header can represent, so save/load round-trips are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from . import nifti

VALID_CLASSES = (0, 1, 2)  # background, VS tumor, cochlea


class VolumeError(ValueError):
    pass


def _f32_spacing(spacing):
    spacing = tuple(float(np.float32(s)) for s in spacing)
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise VolumeError(f"spacing must be 3 positive values, got {spacing}")
    return spacing


@dataclass
class Volume3D:
    """Scalar 3D image with physical voxel spacing."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    intensity_domain: str = "raw"  # "raw" | "normalized"
    case_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise VolumeError(f"expected non-empty 3D data, got shape {self.data.shape}")
        self.spacing = _f32_spacing(self.spacing)
        if self.intensity_domain not in ("raw", "normalized"):
            raise VolumeError(f"unknown intensity domain {self.intensity_domain!r}")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class LabelMap:
    """Integer class grid: 0 background, 1 VS tumor, 2 cochlea."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    case_id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise VolumeError(f"expected non-empty 3D labels, got shape {self.data.shape}")
        if not np.isin(self.data, VALID_CLASSES).all():
            bad = sorted(set(np.unique(self.data)) - set(VALID_CLASSES))
            raise VolumeError(f"invalid class values {bad} in label map")
        self.data = self.data.astype(np.uint8)
        self.spacing = _f32_spacing(self.spacing)

    @property
    def shape(self):
        return self.data.shape

    def class_mask(self, cls: int) -> np.ndarray:
        return self.data == cls


@dataclass
class ProbabilityMap:
    """Per-class probabilities, shape (n_classes, W, H, D), simplex per voxel."""

    probs: np.ndarray
    spacing: tuple[float, float, float]
    case_id: str = ""

    def __post_init__(self):
        self.probs = np.asarray(self.probs)
        if self.probs.ndim != 4:
            raise VolumeError(f"expected (C, W, H, D) probabilities, got {self.probs.shape}")
        self.spacing = _f32_spacing(self.spacing)

    def argmax_labels(self) -> LabelMap:
        # np.argmax takes the first maximum, so ties break to the lowest class
        return LabelMap(np.argmax(self.probs, axis=0).astype(np.uint8), self.spacing, self.case_id)


@dataclass
class PreprocessSpec:
    """Fixed preprocessing: resample to a common voxel size, min-max normalize,
    then center-crop/pad to a fixed sub-volume."""

    target_spacing: tuple[float, float, float] = (0.6, 0.6, 1.0)
    norm_min: float = 0.0
    norm_max: float = 5000.0
    crop_size: tuple[int, int, int] = (256, 256, 64)
    pad_fill: float = -1.0

    def __post_init__(self):
        if self.norm_max <= self.norm_min:
            raise VolumeError("norm_max must exceed norm_min")
        if any(c < 1 for c in self.crop_size):
            raise VolumeError("crop dimensions must be >= 1")
        if any(s <= 0 for s in self.target_spacing):
            raise VolumeError("target spacing must be positive")


def resampled_size(n_in: int, s_in: float, s_out: float) -> int:
    """Output length along one axis: max(1, round-half-up(n_in * s_in / s_out))."""
    return max(1, int(np.floor(n_in * s_in / s_out + 0.5)))


def resample(v, target_spacing):
    """Resample to target spacing: trilinear with edge clamping for images,
    nearest-neighbor for label maps."""
    target_spacing = _f32_spacing(target_spacing)
    is_label = isinstance(v, LabelMap)
    out_shape = tuple(
        resampled_size(n, s, t) for n, s, t in zip(v.data.shape, v.spacing, target_spacing)
    )
    # voxel-center alignment: out index i samples input at (i + 0.5)*t/s - 0.5
    axes = [
        (np.arange(n_out) + 0.5) * (t / s) - 0.5
        for n_out, t, s in zip(out_shape, target_spacing, v.spacing)
    ]
    coords = np.meshgrid(*axes, indexing="ij")
    order = 0 if is_label else 1
    out = map_coordinates(v.data.astype(np.float64, copy=False), coords, order=order, mode="nearest")
    if is_label:
        return LabelMap(out.astype(np.uint8), target_spacing, v.case_id)
    return Volume3D(
        out.astype(v.data.dtype if np.issubdtype(v.data.dtype, np.floating) else np.float32),
        target_spacing,
        v.intensity_domain,
        v.case_id,
        dict(v.meta),
    )


def minmax_normalize(v: Volume3D, spec: PreprocessSpec) -> Volume3D:
    """Clip to [norm_min, norm_max] and scale linearly onto [-1, 1]."""
    if v.intensity_domain != "raw":
        raise VolumeError("volume is already normalized")
    x = np.clip(v.data.astype(np.float32), spec.norm_min, spec.norm_max)
    x = 2.0 * (x - spec.norm_min) / (spec.norm_max - spec.norm_min) - 1.0
    return Volume3D(x.astype(np.float32), v.spacing, "normalized", v.case_id, dict(v.meta))


def center_crop_or_pad(v, crop_size, pad_fill: float = -1.0):
    """Center-crop each axis down, or pad symmetrically up (extra voxel on the
    high side), to the requested shape. Labels pad with 0."""
    is_label = isinstance(v, LabelMap)
    fill = 0 if is_label else pad_fill
    data = v.data
    out = np.full(tuple(crop_size), fill, dtype=data.dtype)
    src, dst = [], []
    for n, c in zip(data.shape, crop_size):
        if n >= c:
            off = (n - c) // 2
            src.append(slice(off, off + c))
            dst.append(slice(0, c))
        else:
            pad_lo = (c - n) // 2
            src.append(slice(0, n))
            dst.append(slice(pad_lo, pad_lo + n))
    out[tuple(dst)] = data[tuple(src)]
    if is_label:
        return LabelMap(out, v.spacing, v.case_id)
    return Volume3D(out, v.spacing, v.intensity_domain, v.case_id, dict(v.meta))


def preprocess_case(vol: Volume3D, label: LabelMap | None, spec: PreprocessSpec):
    """resample -> normalize -> center crop/pad, applied jointly to image and label."""
    vol = resample(vol, spec.target_spacing)
    vol = minmax_normalize(vol, spec)
    vol = center_crop_or_pad(vol, spec.crop_size, spec.pad_fill)
    if label is None:
        return vol, None
    label = resample(label, spec.target_spacing)
    label = center_crop_or_pad(label, spec.crop_size)
    return vol, label


def load_volume(path, as_label: bool | None = None):
    """Load a NIfTI volume. Files named ``*_label.nii[.gz]`` load as LabelMap
    unless overridden via as_label."""
    path = Path(path)
    data, spacing = nifti.read(path)
    stem = path.name
    for suf in (".nii.gz", ".nii"):
        if stem.endswith(suf):
            stem = stem[: -len(suf)]
            break
    case_id, _, tag = stem.rpartition("_")
    if as_label is None:
        as_label = tag == "label"
    if not case_id:
        case_id = stem
    if as_label:
        if not np.isin(data, VALID_CLASSES).all():
            bad = sorted(set(np.unique(data)) - set(VALID_CLASSES))
            raise VolumeError(f"invalid class values {bad} in label file {path}")
        return LabelMap(data.astype(np.uint8), spacing, case_id)
    return Volume3D(data, spacing, "raw", case_id, {"modality": tag} if tag else {})


def save_volume(v, path):
    """Write a Volume3D or LabelMap as NIfTI-1; labels keep an integer dtype."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(v, LabelMap):
        nifti.write(path, v.data.astype(np.uint8), v.spacing)
    else:
        data = v.data
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        nifti.write(path, data, v.spacing)


def mark_normalized(v: Volume3D) -> Volume3D:
    """Re-tag a loaded volume whose values are already in [-1, 1]."""
    return replace(v, intensity_domain="normalized")


def discover_cases(directory, modality: str) -> list[str]:
    """Case ids from the ``<case_id>_<modality>.nii[.gz]`` naming convention."""
    directory = Path(directory)
    ids = set()
    for suf in (".nii", ".nii.gz"):
        for p in directory.glob(f"*_{modality}{suf}"):
            ids.add(p.name[: -len(f"_{modality}{suf}")])
    return sorted(ids)


def case_path(directory, case_id: str, modality: str) -> Path:
    """Resolve the file for one case/modality, preferring .nii.gz."""
    directory = Path(directory)
    for suf in (".nii.gz", ".nii"):
        p = directory / f"{case_id}_{modality}{suf}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no {modality} file for case {case_id} in {directory}")
