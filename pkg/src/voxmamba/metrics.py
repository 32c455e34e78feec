"""Volumetric segmentation metrics: Dice, IoU, 95th-percentile Hausdorff.

Conventions (the source papers leave these open; they are fixed here and
documented in the report):

* both masks empty: DSC = 1.0, HD95 = 0.0 (nothing to find, nothing found);
* exactly one mask empty: HD95 is undefined; the volume diagonal length is
  reported and the class is flagged in ``MetricsReport.undefined_hd``;
* percentile method: nearest-rank, i.e. the ceil(0.95*n)-th order statistic;
* a voxel is a boundary voxel if it is foreground and 6-connected to
  background or touching the volume edge;
* distances are in voxel units unless a per-axis spacing is given.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ShapeError


@dataclass
class LabelVolume:
    """Integer class id per voxel, optionally with physical spacing (mm)."""

    labels: np.ndarray
    spacing: tuple | None = None
    n_classes: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise ShapeError(f"labels must be a 3-D grid, got shape {self.labels.shape}")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 1
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.n_classes):
            raise ConfigError(
                f"labels outside [0, {self.n_classes}): "
                f"range [{self.labels.min()}, {self.labels.max()}]")
        if self.spacing is not None:
            self.spacing = tuple(float(s) for s in self.spacing)
            if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
                raise ConfigError(f"spacing must be 3 positive values, got {self.spacing}")

    @property
    def dims(self):
        return self.labels.shape


@dataclass
class MetricsReport:
    """Per-class DSC / HD95 plus averages over classes present in either volume."""

    dsc: dict = field(default_factory=dict)         # class id -> fraction or None
    hd95: dict = field(default_factory=dict)        # class id -> distance or None
    undefined_hd: list = field(default_factory=list)
    mean_dsc: float = float("nan")
    mean_hd95: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "per_class": {
                str(c): {"dsc": self.dsc[c], "hd95": self.hd95[c]}
                for c in sorted(self.dsc)
            },
            "mean_dsc": self.mean_dsc,
            "mean_hd95": self.mean_hd95,
            "undefined_hd": list(self.undefined_hd),
        }


def _check_same_dims(p: np.ndarray, gt: np.ndarray) -> None:
    if p.shape != gt.shape:
        raise ShapeError(f"mask dims differ: {p.shape} vs {gt.shape}")


def dice(p: np.ndarray, gt: np.ndarray) -> float:
    """2|P n GT| / (|P| + |GT|); 1.0 when both masks are empty."""
    p = np.asarray(p, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_same_dims(p, gt)
    denom = int(p.sum()) + int(gt.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, gt).sum()) / denom


def iou(p: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    p = np.asarray(p, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_same_dims(p, gt)
    union = int(np.logical_or(p, gt).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(p, gt).sum()) / union


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels 6-connected to background or touching the volume edge."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = padded.copy()
    for ax in range(3):
        interior &= np.roll(padded, 1, axis=ax)
        interior &= np.roll(padded, -1, axis=ax)
    interior = interior[1:-1, 1:-1, 1:-1]
    return mask & ~interior


def _nearest_rank_percentile(values: np.ndarray, q: float) -> float:
    """ceil(q*n)-th order statistic of a non-empty set."""
    v = np.sort(np.asarray(values).reshape(-1))
    k = int(np.ceil(q * v.size))
    return float(v[max(k, 1) - 1])


def volume_diagonal(dims, spacing=None) -> float:
    sp = np.ones(3) if spacing is None else np.asarray(spacing, dtype=float)
    return float(np.sqrt((((np.asarray(dims) - 1) * sp) ** 2).sum()))


def hd95(p: np.ndarray, gt: np.ndarray, spacing=None) -> tuple:
    """max of the two directed 95th-percentile boundary distances.

    Returns (value, defined). When exactly one mask is empty the distance is
    undefined; the volume diagonal is returned as a documented sentinel with
    defined=False. Both masks empty gives (0.0, True).
    """
    p = np.asarray(p, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_same_dims(p, gt)
    p_empty, gt_empty = not p.any(), not gt.any()
    if p_empty and gt_empty:
        return 0.0, True
    if p_empty or gt_empty:
        return volume_diagonal(p.shape, spacing), False
    bp = boundary_mask(p)
    bg = boundary_mask(gt)
    sp = None if spacing is None else tuple(spacing)
    # exact Euclidean distance to the nearest boundary voxel of the other mask
    dist_to_gt = ndimage.distance_transform_edt(~bg, sampling=sp)
    dist_to_p = ndimage.distance_transform_edt(~bp, sampling=sp)
    d_pg = _nearest_rank_percentile(dist_to_gt[bp], 0.95)
    d_gp = _nearest_rank_percentile(dist_to_p[bg], 0.95)
    return max(d_pg, d_gp), True


def evaluate(pred: LabelVolume, gt: LabelVolume) -> MetricsReport:
    """Per-class one-vs-rest DSC and HD95; averages exclude classes absent
    from both volumes."""
    if pred.dims != gt.dims:
        raise ShapeError(f"volume dims differ: {pred.dims} vs {gt.dims}")
    if pred.n_classes != gt.n_classes:
        raise ConfigError(
            f"class sets differ: {pred.n_classes} vs {gt.n_classes} classes")
    spacing = gt.spacing or pred.spacing
    report = MetricsReport()
    dsc_vals, hd_vals = [], []
    for c in range(gt.n_classes):
        pm = pred.labels == c
        gm = gt.labels == c
        if not pm.any() and not gm.any():
            report.dsc[c] = None
            report.hd95[c] = None
            continue
        d = dice(pm, gm)
        h, defined = hd95(pm, gm, spacing)
        report.dsc[c] = d
        report.hd95[c] = h
        if not defined:
            report.undefined_hd.append(c)
        dsc_vals.append(d)
        hd_vals.append(h)
    report.mean_dsc = float(np.mean(dsc_vals)) if dsc_vals else float("nan")
    report.mean_hd95 = float(np.mean(hd_vals)) if hd_vals else float("nan")
    return report
