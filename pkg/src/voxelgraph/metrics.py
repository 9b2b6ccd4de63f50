"""Overlap and surface-distance metrics between binary masks.

Distances are measured between surface-voxel centers in physical units
(voxel coordinates scaled by spacing); the surface is the face-6 boundary
including voxels on the volume edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .volume import Mask3, require_mask, surface_voxels


class UndefinedMetricError(ValueError):
    """Surface distances are undefined when a mask has no foreground."""


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation summary; hd95/assd are None when undefined (empty mask)."""

    dice: float
    hd95: float | None
    assd: float | None
    n_surface_pred: int
    n_surface_gt: int
    spacing: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {
            "dice": self.dice,
            "hd95": self.hd95,
            "assd": self.assd,
            "surfaces": {"pred": self.n_surface_pred, "gt": self.n_surface_gt},
            "spacing": list(self.spacing),
        }


def _check_pair(a: Mask3, b: Mask3) -> None:
    require_mask(a, "pred")
    require_mask(b, "gt")
    if a.dims != b.dims:
        raise ValueError(f"mask dims differ: {a.dims} vs {b.dims}")


def _resolve_spacing(a: Mask3, b: Mask3, spacing) -> np.ndarray:
    if spacing is None:
        if a.spacing != b.spacing:
            raise ValueError(
                f"mask spacings differ ({a.spacing} vs {b.spacing}); pass spacing explicitly"
            )
        spacing = a.spacing
    out = np.asarray(spacing, dtype=np.float64)
    if out.shape != (3,) or np.any(out <= 0):
        raise ValueError(f"spacing must be three positive values, got {spacing}")
    return out


def dice(pred: Mask3, gt: Mask3) -> float:
    """2|P∩G| / (|P|+|G|); two empty masks agree perfectly (1.0)."""
    _check_pair(pred, gt)
    p = pred.data.astype(bool)
    g = gt.data.astype(bool)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def surface_distances(a: Mask3, b: Mask3, spacing=None) -> tuple[np.ndarray, np.ndarray]:
    """Directed nearest-surface distances d(S_a -> S_b) and d(S_b -> S_a)."""
    _check_pair(a, b)
    sp = _resolve_spacing(a, b, spacing)
    if not a.data.any() or not b.data.any():
        raise UndefinedMetricError("surface distances need both masks nonempty")
    pts_a = surface_voxels(a) * sp
    pts_b = surface_voxels(b) * sp
    d_ab = cKDTree(pts_b).query(pts_a)[0]
    d_ba = cKDTree(pts_a).query(pts_b)[0]
    return d_ab, d_ba


def hd95(pred: Mask3, gt: Mask3, spacing=None) -> float:
    """Max of the two directed 95th-percentile surface distances.

    Percentiles interpolate linearly between closest ranks.
    """
    d_ab, d_ba = surface_distances(pred, gt, spacing)
    return float(max(np.percentile(d_ab, 95), np.percentile(d_ba, 95)))


def assd(pred: Mask3, gt: Mask3, spacing=None) -> float:
    """Mean of all directed surface distances pooled over both directions."""
    d_ab, d_ba = surface_distances(pred, gt, spacing)
    return float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))


def compute_report(pred: Mask3, gt: Mask3, spacing=None) -> MetricsReport:
    """Dice always; hd95/assd reported as None when a mask is empty."""
    _check_pair(pred, gt)
    sp = _resolve_spacing(pred, gt, spacing)
    dice_value = dice(pred, gt)
    if pred.data.any() and gt.data.any():
        d_ab, d_ba = surface_distances(pred, gt, sp)
        hd_value = float(max(np.percentile(d_ab, 95), np.percentile(d_ba, 95)))
        assd_value = float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))
        n_pred, n_gt = d_ab.size, d_ba.size
    else:
        hd_value = None
        assd_value = None
        n_pred = surface_voxels(pred).shape[0]
        n_gt = surface_voxels(gt).shape[0]
    return MetricsReport(
        dice=dice_value,
        hd95=hd_value,
        assd=assd_value,
        n_surface_pred=int(n_pred),
        n_surface_gt=int(n_gt),
        spacing=tuple(float(s) for s in sp),
    )
