"""Deterministic synthetic two-modality dataset: one ellipsoidal tumor
(class 1), two small cochlea-like spheres (class 2), and a smoothly textured
background, rendered under two different intensity tables so the modality gap
is non-trivial (tumor bright in modality A, dim in B; cochlea the reverse).

Intensities are emitted in the raw [0, 5000] domain so the normalization
path is exercised end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .volume import LabelMap, Volume3D, save_volume


class PlacementError(RuntimeError):
    pass


def _default_intensities():
    # class -> (mean, noise std), raw domain
    return {
        "a": {0: (1200.0, 150.0), 1: (4000.0, 150.0), 2: (1600.0, 120.0)},
        "b": {0: (1800.0, 150.0), 1: (2200.0, 150.0), 2: (4200.0, 120.0)},
    }


@dataclass
class PhantomSpec:
    size: tuple[int, int, int] = (64, 64, 32)
    spacing: tuple[float, float, float] = (0.6, 0.6, 1.0)
    tumor_radius: tuple[float, float] = (4.0, 7.0)  # semi-axis range, voxels
    tumor_radius_z: tuple[float, float] = (3.0, 4.0)
    cochlea_radius: tuple[float, float] = (1.0, 2.0)
    cochlea_offset: tuple[float, float] = (8.0, 10.0)  # lateral distance from tumor
    center_jitter: tuple[int, int, int] = (3, 3, 2)
    intensities: dict = field(default_factory=_default_intensities)
    smooth_sigma: float = 2.0
    seed: int = 0

    @property
    def modalities(self):
        return tuple(sorted(self.intensities))


def _ellipsoid_mask(shape, center, semi_axes):
    grids = np.ogrid[tuple(slice(0, n) for n in shape)]
    acc = np.zeros(shape, dtype=np.float64)
    for g, c, a in zip(grids, center, semi_axes):
        acc = acc + ((g - c) / a) ** 2
    return acc <= 1.0


def generate_case(spec: PhantomSpec, case_index: int):
    """Build one case: modality volumes (same geometry, different intensity
    tables) plus the shared label map. Fully determined by (seed, case_index).
    """
    rng = np.random.default_rng([spec.seed, case_index])
    shape = tuple(spec.size)
    cx = [n // 2 + int(rng.integers(-j, j + 1)) for n, j in zip(shape, spec.center_jitter)]

    tumor_axes = (
        rng.uniform(*spec.tumor_radius),
        rng.uniform(*spec.tumor_radius),
        rng.uniform(*spec.tumor_radius_z),
    )
    labels = np.zeros(shape, dtype=np.uint8)
    tumor = _ellipsoid_mask(shape, cx, tumor_axes)
    labels[tumor] = 1

    # two cochlea spheres flanking the tumor along x, clear of the tumor
    for attempt in range(64):
        r = rng.uniform(*spec.cochlea_radius)
        off = rng.uniform(*spec.cochlea_offset)
        dz = int(rng.integers(-2, 3))
        ok = True
        spheres = []
        for side in (-1, 1):
            c = (cx[0] + side * off, cx[1], cx[2] + dz)
            if not all(r <= ci <= n - 1 - r for ci, n in zip(c, shape)):
                ok = False
                break
            sph = _ellipsoid_mask(shape, c, (r, r, r))
            if (sph & tumor).any():
                ok = False
                break
            spheres.append(sph)
        if ok:
            for sph in spheres:
                labels[sph] = 2
            break
    else:
        raise PlacementError(f"structures cannot be placed for case {case_index}")

    case_id = f"case{case_index:03d}"
    label_map = LabelMap(labels, spec.spacing, case_id)

    noise = gaussian_filter(rng.standard_normal(shape), spec.smooth_sigma)
    noise /= max(noise.std(), 1e-8)
    vols = {}
    for mod in spec.modalities:
        table = spec.intensities[mod]
        mean = np.zeros(shape, dtype=np.float32)
        std = np.zeros(shape, dtype=np.float32)
        for cls, (m, s) in table.items():
            sel = labels == int(cls)
            mean[sel] = m
            std[sel] = s
        data = np.clip(mean + std * noise.astype(np.float32), 0.0, 5000.0)
        vols[mod] = Volume3D(data.astype(np.float32), spec.spacing, "raw", case_id, {"modality": mod})
    return vols[spec.modalities[0]], vols[spec.modalities[1]], label_map


def generate_dataset(spec: PhantomSpec, n_cases: int, out_dir) -> dict:
    """Write n cases in the NIfTI directory convention plus a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    case_ids = []
    for i in range(n_cases):
        vol_a, vol_b, labels = generate_case(spec, i)
        save_volume(vol_a, out_dir / f"{labels.case_id}_{spec.modalities[0]}.nii.gz")
        save_volume(vol_b, out_dir / f"{labels.case_id}_{spec.modalities[1]}.nii.gz")
        save_volume(labels, out_dir / f"{labels.case_id}_label.nii.gz")
        case_ids.append(labels.case_id)
    manifest = {
        "seed": spec.seed,
        "size": list(spec.size),
        "spacing": list(spec.spacing),
        "modalities": list(spec.modalities),
        "cases": case_ids,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest
