"""Image-similarity metrics on tumor-ROI crops and segmentation-overlap metrics.

SSIM/PSNR are computed on the region of interest given by the tumor bounding
box, slice by slice in 2D; Dice is 3D voxel counting; surface distances are
3D and use anisotropic physical spacing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DataError
from .volume import BoundingBox, Mask, Volume, crop

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 2.0  # normalization contract: volumes live in [-1, 1]

REGIONS = {"intra": frozenset({1}), "extra": frozenset({2}), "whole": frozenset({1, 2})}

SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class EvalRecord:
    """One row of metrics.csv: image quality plus per-region overlap metrics."""

    study_id: str
    beta: int
    arm: str  # low_dose | restored
    ssim: float
    psnr_db: float
    dice_intra: float
    dice_extra: float
    dice_whole: float
    hd95_intra: float
    hd95_extra: float
    hd95_whole: float
    asd_intra: float
    asd_extra: float
    asd_whole: float


METRICS_COLUMNS = [f.name for f in fields(EvalRecord)]


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def _windowed_stats(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode weighted local means via explicit window gathering."""
    kh, kw = kernel.shape
    windows = np.lib.stride_tricks.sliding_window_view(img, (kh, kw))
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def _ssim_2d(a: np.ndarray, b: np.ndarray) -> float:
    h, w = a.shape
    kh, kw = min(SSIM_WINDOW, h), min(SSIM_WINDOW, w)
    if kh == SSIM_WINDOW and kw == SSIM_WINDOW:
        kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    else:
        kernel = np.full((kh, kw), 1.0 / (kh * kw))
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    mu_a = _windowed_stats(a, kernel)
    mu_b = _windowed_stats(b, kernel)
    var_a = _windowed_stats(a * a, kernel) - mu_a * mu_a
    var_b = _windowed_stats(b * b, kernel) - mu_b * mu_b
    cov = _windowed_stats(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_roi(test: Volume, ref: Volume, box: BoundingBox) -> float:
    """Mean per-slice 2D SSIM over the cropped region (Wang constants, L=2)."""
    if test.dims != ref.dims:
        raise DataError(f"volume dims differ: {test.dims} vs {ref.dims}")
    a = crop(test, box).data.astype(np.float64)
    b = crop(ref, box).data.astype(np.float64)
    return float(np.mean([_ssim_2d(a[z], b[z]) for z in range(a.shape[0])]))


def psnr_roi(test: Volume, ref: Volume, box: BoundingBox) -> float:
    """PSNR in dB over the cropped region; +inf for identical crops."""
    if test.dims != ref.dims:
        raise DataError(f"volume dims differ: {test.dims} vs {ref.dims}")
    a = crop(test, box).data.astype(np.float64)
    b = crop(ref, box).data.astype(np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(DATA_RANGE**2 / mse))


def _region_mask(m: Mask, labels: frozenset[int]) -> np.ndarray:
    return np.isin(m.labels, sorted(labels))


def region_is_empty(m: Mask, labels: frozenset[int]) -> bool:
    """True when no voxel of the mask carries a label in ``labels``."""
    return not _region_mask(m, labels).any()


def dice(a: Mask, b: Mask, labels: frozenset[int]) -> float:
    """2|A∩B| / (|A|+|B|); two empty regions count as perfect agreement.

    Callers that need to flag the both-empty convention can consult
    ``region_is_empty`` on each mask.
    """
    if a.dims != b.dims:
        raise DataError(f"mask dims differ: {a.dims} vs {b.dims}")
    sa = _region_mask(a, labels)
    sb = _region_mask(b, labels)
    total = int(sa.sum()) + int(sb.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((sa & sb).sum()) / total


def surface_voxels(m: Mask, labels: frozenset[int]) -> np.ndarray:
    """(n, 3) array of (x, y, z) indices of region voxels on the 6-connected surface.

    Volume-boundary voxels count as surface.
    """
    region = _region_mask(m, labels)
    interior = ndimage.binary_erosion(region, structure=SIX_CONNECTED, border_value=0)
    zs, ys, xs = np.nonzero(region & ~interior)
    return np.stack([xs, ys, zs], axis=1)


def _pooled_surface_distances(a: Mask, b: Mask, labels: frozenset[int],
                              spacing: tuple[float, float, float]) -> np.ndarray | None:
    sa = surface_voxels(a, labels)
    sb = surface_voxels(b, labels)
    if len(sa) == 0 or len(sb) == 0:
        return None
    sp = np.asarray(spacing, dtype=np.float64)
    pa = sa * sp
    pb = sb * sp
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return np.concatenate([d_ab, d_ba])


def hd95(a: Mask, b: Mask, labels: frozenset[int],
         spacing: tuple[float, float, float]) -> float:
    """95th percentile (linear interpolation) of pooled symmetric surface distances in mm.

    NaN sentinel when either region is empty.
    """
    pooled = _pooled_surface_distances(a, b, labels, spacing)
    if pooled is None:
        return float("nan")
    return float(np.percentile(pooled, 95.0))


def asd(a: Mask, b: Mask, labels: frozenset[int],
        spacing: tuple[float, float, float]) -> float:
    """Mean of the pooled symmetric surface distances in mm; NaN when undefined."""
    pooled = _pooled_surface_distances(a, b, labels, spacing)
    if pooled is None:
        return float("nan")
    return float(pooled.mean())


def stand_in_segment(v: Volume, box: BoundingBox, plane_x: int,
                     threshold_frac: float = 0.65) -> Mask:
    """Trivial threshold segmenter standing in for an external tumor model.

    Voxels inside the ROI box whose intensity exceeds ``threshold_frac`` of
    the ROI maximum form the candidate set; the largest 6-connected
    component is kept and split at the sagittal plane into labels 1/2.
    Intended for volumes in their native (non-negative) intensity space.
    """
    if not 0.0 <= threshold_frac <= 1.0:
        raise DataError(f"threshold fraction must lie in [0, 1], got {threshold_frac}")
    roi = crop(v, box).data.astype(np.float64)
    threshold = threshold_frac * float(roi.max())
    candidates = roi > threshold
    labels = np.zeros(v.data.shape, dtype=np.uint8)
    if candidates.any():
        comp, n_comp = ndimage.label(candidates, structure=SIX_CONNECTED)
        sizes = np.bincount(comp.ravel())
        sizes[0] = 0
        keep = comp == int(sizes.argmax())
        (x0, y0, z0), (x1, y1, z1) = box.min, box.max
        ix = np.arange(x0, x1 + 1)[None, None, :]
        region = np.zeros(candidates.shape, dtype=np.uint8)
        region[keep & (ix < plane_x)] = 1
        region[keep & (ix >= plane_x)] = 2
        labels[z0:z1 + 1, y0:y1 + 1, x0:x1 + 1] = region
    return Mask(labels, v.spacing)


def evaluate_pair(study_id: str, beta: int, arm: str,
                  test: Volume, ref: Volume, box: BoundingBox,
                  gt_mask: Mask, pred_mask: Mask | None) -> EvalRecord:
    """Assemble one EvalRecord: ROI image quality plus overlap of a predicted mask."""
    seg = {}
    for suffix, labels in REGIONS.items():
        if pred_mask is None:
            seg[f"dice_{suffix}"] = float("nan")
            seg[f"hd95_{suffix}"] = float("nan")
            seg[f"asd_{suffix}"] = float("nan")
        else:
            seg[f"dice_{suffix}"] = dice(pred_mask, gt_mask, labels)
            seg[f"hd95_{suffix}"] = hd95(pred_mask, gt_mask, labels, gt_mask.spacing)
            seg[f"asd_{suffix}"] = asd(pred_mask, gt_mask, labels, gt_mask.spacing)
    return EvalRecord(
        study_id=study_id, beta=beta, arm=arm,
        ssim=ssim_roi(test, ref, box),
        psnr_db=psnr_roi(test, ref, box),
        **seg,
    )


def write_metrics_csv(records: list[EvalRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for r in records:
            row = [getattr(r, c) for c in METRICS_COLUMNS]
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_metrics_csv(path: str | Path) -> list[EvalRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            raise DataError(f"{path}: unexpected metrics.csv columns {reader.fieldnames}")
        for row in reader:
            records.append(EvalRecord(
                study_id=row["study_id"], beta=int(row["beta"]), arm=row["arm"],
                **{c: float(row[c]) for c in METRICS_COLUMNS[3:]},
            ))
    return records
