"""Histogram-based affine intensity calibration between image pairs.

Pre-contrast and contrast-enhanced acquisitions of the same anatomy share
the histogram shape up to translation and scaling of the intensity window.
The calibration anchors an affine map on two histogram peaks: the background
peak and the dominant tissue peak.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .volume import Volume

DEFAULT_BINS = 256
DEFAULT_SMOOTH_RADIUS = 2
PEAK_PROMINENCE_FLOOR = 0.01  # fraction of the global smoothed maximum


@dataclass(frozen=True)
class Histogram:
    """Equal-width intensity histogram with strictly increasing bin edges."""

    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if edges.ndim != 1 or counts.ndim != 1 or edges.size != counts.size + 1:
            raise DataError("histogram needs n_bins counts and n_bins+1 edges")
        if not np.all(np.diff(edges) > 0):
            raise DataError("histogram bin edges must be strictly increasing")
        if counts.min(initial=0) < 0:
            raise DataError("histogram counts must be non-negative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


@dataclass(frozen=True)
class AffineIntensityMap:
    """x -> scale * x + offset with scale > 0."""

    scale: float
    offset: float

    def __post_init__(self):
        if not (np.isfinite(self.scale) and np.isfinite(self.offset) and self.scale > 0):
            raise DataError(f"invalid affine map scale={self.scale} offset={self.offset}")

    def inverted(self) -> "AffineIntensityMap":
        return AffineIntensityMap(1.0 / self.scale, -self.offset / self.scale)


def compute_histogram(v: Volume, n_bins: int = DEFAULT_BINS) -> Histogram:
    """Equal-width histogram spanning [min, max]; the max lands in the last bin."""
    if n_bins < 2:
        raise DataError(f"n_bins must be >= 2, got {n_bins}")
    lo = float(v.data.min())
    hi = float(v.data.max())
    if lo == hi:
        raise DataError("degenerate histogram: volume has fewer than 2 distinct values")
    counts, edges = np.histogram(v.data, bins=n_bins, range=(lo, hi))
    return Histogram(edges, counts)


def smooth_counts(counts: np.ndarray, radius: int) -> np.ndarray:
    """Moving average with window 2*radius+1; edge bins use truncated windows."""
    if radius < 0:
        raise DataError(f"smooth radius must be >= 0, got {radius}")
    if radius == 0:
        return counts.astype(np.float64)
    win = np.ones(2 * radius + 1)
    sums = np.convolve(counts.astype(np.float64), win, mode="same")
    norms = np.convolve(np.ones(len(counts)), win, mode="same")
    return sums / norms


def find_peaks(h: Histogram, smooth_radius: int = DEFAULT_SMOOTH_RADIUS) -> list[tuple[float, float]]:
    """Strict local maxima of the smoothed counts, as (bin_center, height).

    Plateau maxima report their leftmost bin. Peaks lower than 1% of the
    global smoothed maximum are discarded. Result is ordered by center.
    """
    smoothed = smooth_counts(h.counts, smooth_radius)
    centers = h.bin_centers
    n = len(smoothed)
    floor = PEAK_PROMINENCE_FLOOR * smoothed.max()
    peaks = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and smoothed[j + 1] == smoothed[i]:
            j += 1
        left = smoothed[i - 1] if i > 0 else -np.inf
        right = smoothed[j + 1] if j + 1 < n else -np.inf
        if smoothed[i] > left and smoothed[i] > right and smoothed[i] >= floor:
            peaks.append((float(centers[i]), float(smoothed[i])))
        i = j + 1
    return peaks


def estimate_calibration(t1: Volume, t1ce: Volume,
                         n_bins: int = DEFAULT_BINS,
                         smooth_radius: int = DEFAULT_SMOOTH_RADIUS) -> AffineIntensityMap:
    """Affine map sending the t1ce background/tissue peaks onto the t1 ones.

    The first retained peak is the zero background, the second the dominant
    tissue mode; two anchors determine scale and offset uniquely.
    """
    anchors = []
    for name, vol in (("t1", t1), ("t1ce", t1ce)):
        peaks = find_peaks(compute_histogram(vol, n_bins), smooth_radius)
        if len(peaks) < 2:
            raise DataError(f"{name}: found {len(peaks)} peak(s), need at least 2 to calibrate")
        b, p = peaks[0][0], peaks[1][0]
        if p <= b:
            raise DataError(f"{name}: peak ordering violated (tissue {p} <= background {b})")
        anchors.append((b, p))
    (b1, p1), (b2, p2) = anchors
    scale = (p1 - b1) / (p2 - b2)
    offset = b1 - scale * b2
    return AffineIntensityMap(scale, offset)


def apply_calibration(v: Volume, m: AffineIntensityMap) -> Volume:
    """Map every voxel x -> scale*x + offset; dims/spacing unchanged."""
    out = v.data.astype(np.float64) * m.scale + m.offset
    return Volume(out.astype(np.float32), v.spacing, v.unit)


def write_map(m: AffineIntensityMap, path) -> None:
    Path(path).write_text(f"scale={m.scale!r}\noffset={m.offset!r}\n", encoding="utf-8")


def read_map(path) -> AffineIntensityMap:
    fields = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            fields[k.strip()] = v.strip()
    try:
        return AffineIntensityMap(float(fields["scale"]), float(fields["offset"]))
    except (KeyError, ValueError) as exc:
        raise DataError(f"unparseable calibration map file {path}") from exc
