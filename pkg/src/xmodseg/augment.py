"""Online augmentation applied jointly to image and label: random tumor
signal reduction, per-plane random flips, and right-angle axial rotation.

Randomness is a pure function of (seed, sample_index): each sample draws from
``default_rng(seed XOR sample_index)``, so outcomes are independent of worker
count and iteration order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .volume import LabelMap, Volume3D, VolumeError

TUMOR_CLASS = 1


@dataclass
class AugmentationSpec:
    tumor_reduce_enabled: bool = True
    flip_prob_per_plane: float = 0.5
    rotation_angles: tuple[int, ...] = (90, 180, 270)  # identity drawn alongside
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob_per_plane <= 1.0:
            raise ValueError("flip probability must lie in [0, 1]")
        bad = set(self.rotation_angles) - {90, 180, 270}
        if bad:
            raise ValueError(f"rotation angles must be right angles, got {sorted(bad)}")

    def rng_for(self, sample_index: int) -> np.random.Generator:
        return np.random.default_rng(np.uint64(self.seed) ^ np.uint64(sample_index))


def _check_shapes(v: Volume3D, labels: LabelMap):
    if v.data.shape != labels.data.shape:
        raise VolumeError(
            f"image/label shape mismatch: {v.data.shape} vs {labels.data.shape}"
        )


def reduce_tumor_signal(v: Volume3D, labels: LabelMap, alpha: float) -> Volume3D:
    """Scale tumor-voxel intensities by (1 - 0.5 * alpha); everything else is
    left bit-exact."""
    _check_shapes(v, labels)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if v.intensity_domain != "normalized":
        raise VolumeError("tumor signal reduction expects a normalized volume")
    data = v.data.copy()
    tumor = labels.data == TUMOR_CLASS
    factor = np.asarray(1.0 - 0.5 * alpha, dtype=data.dtype)
    data[tumor] = data[tumor] * factor
    return replace(v, data=data)


def random_flip(v: Volume3D, labels: LabelMap, flips: tuple[bool, bool, bool]):
    """Reverse the flagged axes on image and label identically."""
    _check_shapes(v, labels)
    axes = tuple(i for i, f in enumerate(flips) if f)
    if not axes:
        return replace(v, data=v.data.copy()), replace(labels, data=labels.data.copy())
    vd = np.flip(v.data, axis=axes).copy()
    ld = np.flip(labels.data, axis=axes).copy()
    return replace(v, data=vd), replace(labels, data=ld)


def random_rotate_axial(v: Volume3D, labels: LabelMap, angle: int):
    """Rotate both grids by a right angle in the axial (x, y) plane."""
    _check_shapes(v, labels)
    if angle not in (0, 90, 180, 270):
        raise ValueError(f"angle must be one of 0/90/180/270, got {angle}")
    if angle in (90, 270) and v.data.shape[0] != v.data.shape[1]:
        raise VolumeError("quarter-turn rotation requires a square axial plane")
    k = angle // 90
    vd = np.rot90(v.data, k, axes=(0, 1)).copy()
    ld = np.rot90(labels.data, k, axes=(0, 1)).copy()
    return replace(v, data=vd), replace(labels, data=ld)


def sample_augmentation(
    spec: AugmentationSpec, sample_index: int, v: Volume3D, labels: LabelMap
):
    """Draw one augmentation from the per-sample stream and apply it:
    tumor reduction, then flips, then rotation."""
    rng = spec.rng_for(sample_index)
    alpha = float(rng.uniform(0.0, 1.0))
    flips = tuple(bool(rng.uniform() < spec.flip_prob_per_plane) for _ in range(3))
    choices = (0,) + tuple(spec.rotation_angles)
    angle = int(choices[rng.integers(len(choices))])

    if spec.tumor_reduce_enabled:
        v = reduce_tumor_signal(v, labels, alpha)
    v, labels = random_flip(v, labels, flips)
    v, labels = random_rotate_axial(v, labels, angle)
    return v, labels
