"""Low-dose contrast simulation over the dose grid and [-1, 1] normalization.

A reduced-dose acquisition is approximated by the voxelwise convex
combination of the pre-contrast image and the calibrated full-dose image,
weighted by the dose fraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .volume import Volume

DOSE_GRID_PERCENT = (0, 10, 20, 30, 40, 50, 60, 70, 80, 90)


@dataclass(frozen=True)
class DoseFraction:
    """Contrast dose as an integer percent of the standard dose."""

    beta_percent: int

    def __post_init__(self):
        beta = int(self.beta_percent)
        if not 0 <= beta <= 100:
            raise DataError(f"dose percent must lie in [0, 100], got {beta}")
        object.__setattr__(self, "beta_percent", beta)

    @property
    def fraction(self) -> float:
        return self.beta_percent / 100.0


def dose_grid() -> list[DoseFraction]:
    """The nine simulated dose levels plus the zero-dose arm."""
    return [DoseFraction(b) for b in DOSE_GRID_PERCENT]


def simulate_low_dose(t1: Volume, t1ce_cal: Volume, beta: DoseFraction | int,
                      noise_sigma: float = 0.0, noise_seed: int = 0) -> Volume:
    """Voxelwise (1 - beta%) * t1 + beta% * t1ce_cal.

    Endpoints are exact: beta=0 reproduces t1 and beta=100 reproduces
    t1ce_cal bit for bit. Optional additive Gaussian noise is off by
    default and excluded from acceptance runs.
    """
    if isinstance(beta, int):
        beta = DoseFraction(beta)
    if t1.dims != t1ce_cal.dims or t1.spacing != t1ce_cal.spacing:
        raise DataError(
            f"t1 {t1.dims}/{t1.spacing} and t1ce {t1ce_cal.dims}/{t1ce_cal.spacing} "
            "must share dims and spacing"
        )
    f = beta.fraction
    if f == 0.0:
        out = t1.data.copy()
    elif f == 1.0:
        out = t1ce_cal.data.copy()
    else:
        mixed = (1.0 - f) * t1.data.astype(np.float64) + f * t1ce_cal.data.astype(np.float64)
        out = mixed.astype(np.float32)
    if noise_sigma > 0.0:
        rng = np.random.Generator(np.random.PCG64(noise_seed))
        out = (out + rng.normal(0.0, noise_sigma, out.shape)).astype(np.float32)
    return Volume(out, t1.spacing, t1.unit)


def normalize_unit_range(v: Volume) -> tuple[Volume, tuple[float, float]]:
    """Linear map sending min(v) -> -1 and max(v) -> +1; returns (lo, hi) too."""
    lo = float(v.data.min())
    hi = float(v.data.max())
    if lo == hi:
        raise DataError("cannot normalize a constant volume")
    scaled = (v.data.astype(np.float64) - lo) / (hi - lo)
    out = (2.0 * scaled - 1.0).astype(np.float32)
    return Volume(out, v.spacing, "normalized"), (lo, hi)


def denormalize_unit_range(v: Volume, bounds: tuple[float, float],
                           unit: str = "arbitrary") -> Volume:
    """Invert normalize_unit_range given the original (lo, hi) bounds."""
    lo, hi = bounds
    if not hi > lo:
        raise DataError(f"bounds must satisfy hi > lo, got {bounds}")
    out = (v.data.astype(np.float64) + 1.0) * 0.5 * (hi - lo) + lo
    return Volume(out.astype(np.float32), v.spacing, unit)
