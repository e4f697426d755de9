"""Region-overlap (DSC) and boundary-distance (ASSD) evaluation with
per-class mean +/- std aggregation.

Surface voxels are foreground voxels with at least one 6-neighbor that is
background or outside the grid (the grid border counts as background), taken
at voxel centers in mm. ASSD between an empty and a non-empty mask is
undefined and excluded from aggregates.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt

FOREGROUND_CLASSES = {1: "vs", 2: "cochlea"}
BRUTE_FORCE_LIMIT = 10_000  # per-side surface points; above this use the EDT route

_CROSS = np.zeros((3, 3, 3), dtype=bool)
_CROSS[1, 1, 1] = _CROSS[0, 1, 1] = _CROSS[2, 1, 1] = True
_CROSS[1, 0, 1] = _CROSS[1, 2, 1] = _CROSS[1, 1, 0] = _CROSS[1, 1, 2] = True


def _as_bool(mask):
    mask = np.asarray(mask)
    return mask.astype(bool)


def dsc(pred, truth) -> float:
    """2|A n B| / (|A| + |B|); both empty -> 1.0, exactly one empty -> 0.0."""
    pred, truth = _as_bool(pred), _as_bool(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {truth.shape}")
    a, b = int(pred.sum()), int(truth.sum())
    if a + b == 0:
        return 1.0
    return 2.0 * int((pred & truth).sum()) / (a + b)


def surface_mask(mask) -> np.ndarray:
    """Boolean mask of border voxels under 6-connectivity; the grid edge
    counts as background."""
    mask = _as_bool(mask)
    interior = binary_erosion(mask, structure=_CROSS, border_value=0)
    return mask & ~interior


def extract_surface(mask, spacing) -> np.ndarray:
    """Surface voxel centers as physical points, shape (n, 3) in mm."""
    pts = np.argwhere(surface_mask(mask)).astype(np.float64)
    return pts * np.asarray(spacing, dtype=np.float64)


def _directed_distances_brute(src_pts, dst_pts):
    # exact all-pairs nearest distance, chunked to bound memory
    out = np.empty(len(src_pts))
    for i in range(0, len(src_pts), 2048):
        chunk = src_pts[i : i + 2048]
        d2 = ((chunk[:, None, :] - dst_pts[None, :, :]) ** 2).sum(axis=2)
        out[i : i + 2048] = np.sqrt(d2.min(axis=1))
    return out


def assd(pred, truth, spacing) -> float:
    """Average symmetric surface distance in mm. Both masks empty -> 0.0;
    exactly one empty -> NaN (undefined, excluded from aggregates)."""
    pred, truth = _as_bool(pred), _as_bool(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {truth.shape}")
    p_empty, t_empty = not pred.any(), not truth.any()
    if p_empty and t_empty:
        return 0.0
    if p_empty or t_empty:
        warnings.warn("ASSD undefined: exactly one mask is empty", stacklevel=2)
        return float("nan")

    sp = surface_mask(pred)
    st = surface_mask(truth)
    n_p, n_t = int(sp.sum()), int(st.sum())
    spacing = tuple(float(s) for s in spacing)

    if max(n_p, n_t) <= BRUTE_FORCE_LIMIT:
        pts_p = np.argwhere(sp).astype(np.float64) * spacing
        pts_t = np.argwhere(st).astype(np.float64) * spacing
        d_pt = _directed_distances_brute(pts_p, pts_t)
        d_tp = _directed_distances_brute(pts_t, pts_p)
    else:
        dt_to_t = distance_transform_edt(~st, sampling=spacing)
        dt_to_p = distance_transform_edt(~sp, sampling=spacing)
        d_pt = dt_to_t[sp]
        d_tp = dt_to_p[st]
    return float((d_pt.sum() + d_tp.sum()) / (n_p + n_t))


@dataclass
class SegMetrics:
    """Per-case metrics for the two foreground classes; ASSD may be NaN."""

    case_id: str
    dsc_vs: float
    dsc_cochlea: float
    assd_vs: float
    assd_cochlea: float

    @property
    def dsc_mean(self) -> float:
        return 0.5 * (self.dsc_vs + self.dsc_cochlea)


def evaluate_case(pred_labels, truth_labels, spacing, case_id: str = "") -> SegMetrics:
    pred = np.asarray(pred_labels)
    truth = np.asarray(truth_labels)
    values = {}
    for cls, name in FOREGROUND_CLASSES.items():
        values[f"dsc_{name}"] = dsc(pred == cls, truth == cls)
        values[f"assd_{name}"] = assd(pred == cls, truth == cls, spacing)
    return SegMetrics(case_id=case_id, **values)


def _mean_std(values):
    # population standard deviation, reported as mean +/- std
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def aggregate_report(per_case: list[SegMetrics]) -> dict:
    """Table-style aggregate: per-class DSC (%) and ASSD (mm) as mean +/- std,
    plus the per-case mean-of-classes DSC. Undefined ASSD values are excluded
    (their count is reported)."""
    if not per_case:
        raise ValueError("cannot aggregate an empty metrics list")
    per_case = sorted(per_case, key=lambda m: m.case_id)
    report = {"n_cases": len(per_case), "dsc_pct": {}, "assd_mm": {}}
    for name in ("vs", "cochlea"):
        d = [getattr(m, f"dsc_{name}") * 100.0 for m in per_case]
        report["dsc_pct"][name] = _mean_std(d)
        a = [getattr(m, f"assd_{name}") for m in per_case]
        defined = [x for x in a if not math.isnan(x)]
        entry = _mean_std(defined) if defined else {"mean": float("nan"), "std": float("nan")}
        entry["n_undefined"] = len(a) - len(defined)
        report["assd_mm"][name] = entry
    report["dsc_pct"]["mean"] = _mean_std([m.dsc_mean * 100.0 for m in per_case])
    return report


def write_case_csv(per_case: list[SegMetrics], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["case_id", "dsc_vs", "dsc_cochlea", "assd_vs", "assd_cochlea"])
        for m in sorted(per_case, key=lambda m: m.case_id):
            w.writerow([m.case_id, m.dsc_vs, m.dsc_cochlea, m.assd_vs, m.assd_cochlea])
