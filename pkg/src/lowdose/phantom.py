"""Deterministic synthetic pre/post-contrast phantom studies with ground truth.

Each study is an ellipsoidal head (background, skull shell, textured tissue)
carrying one enhancing ellipsoidal lesion. The post-contrast volume
multiplies lesion voxels by a known enhancement factor and then distorts the
whole image with a known affine intensity window (gain, bias), so every
downstream stage can be verified against the generator's records.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import floor

import numpy as np

from .errors import DataError
from .volume import BoundingBox, Mask, Volume


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    dims: tuple[int, int, int] = (96, 96, 12)
    spacing: tuple[float, float, float] = (0.5, 0.5, 2.0)
    background_level: float = 0.05
    tissue_level: float = 0.5
    texture_amp: float = 0.1
    skull_level: float = 0.85
    head_radii_mm: tuple[float, float, float] = (20.0, 20.0, 10.0)
    lesion_center_mm: tuple[float, float, float] = (28.0, 24.0, 12.0)
    lesion_radii_mm: tuple[float, float, float] = (5.0, 4.0, 4.0)
    enhancement: float = 1.8
    plane_x: int | None = None  # sagittal split voxel; defaults to the lesion center
    window_gain: float = 1.3
    window_bias: float = 0.1
    noise_sigma: float = 0.01

    def __post_init__(self):
        if self.window_gain <= 0:
            raise DataError(f"window gain must be positive, got {self.window_gain}")
        if self.enhancement < 1.0:
            raise DataError(f"enhancement factor must be >= 1, got {self.enhancement}")


@dataclass(frozen=True)
class PhantomTruth:
    """Generator-side ground truth used by verification tests."""

    bbox: BoundingBox
    plane_x: int
    gain: float
    bias: float
    lesion_mean_t1: float
    lesion_mean_t1ce: float
    tissue_mean: float
    lesion_voxels: int


def _ellipsoid_sq(xs, ys, zs, center, radii) -> np.ndarray:
    cx, cy, cz = center
    rx, ry, rz = radii
    return (((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 + ((zs - cz) / rz) ** 2)


def generate(spec: PhantomSpec) -> tuple[Volume, Volume, Mask, PhantomTruth]:
    """Build the (t1, t1ce, mask, truth) quadruple for one study."""
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing
    # Voxel-center physical coordinates, broadcast to (nz, ny, nx).
    xs = ((np.arange(nx) + 0.5) * sx)[None, None, :]
    ys = ((np.arange(ny) + 0.5) * sy)[None, :, None]
    zs = ((np.arange(nz) + 0.5) * sz)[:, None, None]
    head_center = (nx * sx / 2.0, ny * sy / 2.0, nz * sz / 2.0)

    tissue = _ellipsoid_sq(xs, ys, zs, head_center, spec.head_radii_mm) <= 1.0
    outer = tuple(1.1 * r for r in spec.head_radii_mm)
    skull = (~tissue) & (_ellipsoid_sq(xs, ys, zs, head_center, outer) <= 1.0)
    lesion = _ellipsoid_sq(xs, ys, zs, spec.lesion_center_mm, spec.lesion_radii_mm) <= 1.0
    if not lesion.any():
        raise DataError("lesion ellipsoid contains no voxel")
    if (lesion & ~tissue).any():
        raise DataError("lesion extends outside the head tissue region")

    ss = np.random.SeedSequence(spec.seed)
    rng_anatomy, rng_noise_t1, rng_noise_t1ce = (
        np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(3)
    )

    # Smooth texture: mean of three seeded cosine waves over random directions.
    texture = np.zeros(lesion.shape)
    for _ in range(3):
        direction = rng_anatomy.normal(size=3)
        direction /= np.linalg.norm(direction)
        wavelength = rng_anatomy.uniform(12.0, 30.0)
        phase = rng_anatomy.uniform(0.0, 2.0 * np.pi)
        k = 2.0 * np.pi / wavelength
        texture += np.cos(k * (direction[0] * xs + direction[1] * ys + direction[2] * zs) + phase)
    texture *= spec.texture_amp / 3.0

    base = np.full(lesion.shape, spec.background_level)
    base[skull] = spec.skull_level
    base[tissue] = spec.tissue_level * (1.0 + texture[tissue])

    t1ce_base = base.copy()
    t1ce_base[lesion] *= spec.enhancement

    sigma = spec.noise_sigma
    t1_data = base + (sigma * rng_noise_t1.standard_normal(base.shape) if sigma > 0 else 0.0)
    pre_window = t1ce_base + (sigma * rng_noise_t1ce.standard_normal(base.shape) if sigma > 0 else 0.0)
    t1ce_data = spec.window_gain * pre_window + spec.window_bias

    plane_x = spec.plane_x
    if plane_x is None:
        plane_x = int(spec.lesion_center_mm[0] / sx)
    ix = np.arange(nx)[None, None, :]
    labels = np.zeros(lesion.shape, dtype=np.uint8)
    labels[lesion & (ix < plane_x)] = 1
    labels[lesion & (ix >= plane_x)] = 2

    zs_idx, ys_idx, xs_idx = np.nonzero(lesion)
    bbox = BoundingBox(
        (int(xs_idx.min()), int(ys_idx.min()), int(zs_idx.min())),
        (int(xs_idx.max()), int(ys_idx.max()), int(zs_idx.max())),
    )
    truth = PhantomTruth(
        bbox=bbox,
        plane_x=plane_x,
        gain=spec.window_gain,
        bias=spec.window_bias,
        lesion_mean_t1=float(base[lesion].mean()),
        lesion_mean_t1ce=float(t1ce_base[lesion].mean()),
        tissue_mean=float(base[tissue & ~lesion].mean()),
        lesion_voxels=int(lesion.sum()),
    )
    spacing = spec.spacing
    return (
        Volume(t1_data.astype(np.float32), spacing),
        Volume(t1ce_data.astype(np.float32), spacing),
        Mask(labels, spacing),
        truth,
    )


@dataclass(frozen=True)
class VariationRanges:
    """Uniform sampling ranges for cohort-level study variation.

    Lesion geometry varies widely; intensity parameters vary mildly so the
    input-to-target intensity relation stays consistent across a cohort
    (per-volume normalization amplifies any spread in enhancement or
    tissue level into a study-specific remapping).
    """

    lesion_radius_xy_mm: tuple[float, float] = (3.5, 7.0)
    lesion_radius_z_mm: tuple[float, float] = (3.0, 5.0)
    center_offset_xy_mm: float = 5.0
    center_offset_z_mm: float = 2.0
    enhancement: tuple[float, float] = (1.75, 1.85)
    gain: tuple[float, float] = (1.15, 1.45)
    bias: tuple[float, float] = (0.05, 0.15)
    tissue_level: tuple[float, float] = (0.48, 0.52)
    scans_per_patient: tuple[int, int] = (1, 1)


@dataclass(frozen=True)
class CohortStudy:
    study_id: str
    patient_id: str
    split: str  # train | val | test
    spec: PhantomSpec


VAL_FRACTION = 0.12
TEST_FRACTION = 0.24


def generate_cohort(n_studies: int, base_seed: int,
                    variation: VariationRanges | None = None) -> list[CohortStudy]:
    """Cohort of varied study specs with a patient-level train/val/test split.

    Split targets are floor(0.12 n) validation and floor(0.24 n) test
    studies, remainder training; splits are assigned patient by patient so
    no patient spans two splits (with multiple scans per patient a split
    may overshoot its target by at most one patient's scans).
    """
    if n_studies < 1:
        raise DataError(f"cohort needs at least one study, got {n_studies}")
    variation = variation or VariationRanges()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(base_seed)))

    lo_k, hi_k = variation.scans_per_patient
    patient_of_study: list[int] = []
    patient = 0
    while len(patient_of_study) < n_studies:
        k = int(rng.integers(lo_k, hi_k + 1))
        patient_of_study.extend([patient] * min(k, n_studies - len(patient_of_study)))
        patient += 1
    n_patients = patient

    specs = []
    base_spec = PhantomSpec(seed=0)
    head_center = tuple(d * s / 2.0 for d, s in zip(base_spec.dims, base_spec.spacing))
    for _ in range(n_studies):
        seed = int(rng.integers(0, 2**63))
        rx = rng.uniform(*variation.lesion_radius_xy_mm)
        ry = rng.uniform(*variation.lesion_radius_xy_mm)
        rz = rng.uniform(*variation.lesion_radius_z_mm)
        off = variation.center_offset_xy_mm
        center = (
            head_center[0] + rng.uniform(-off, off),
            head_center[1] + rng.uniform(-off, off),
            head_center[2] + rng.uniform(-variation.center_offset_z_mm, variation.center_offset_z_mm),
        )
        specs.append(PhantomSpec(
            seed=seed,
            tissue_level=float(rng.uniform(*variation.tissue_level)),
            lesion_center_mm=center,
            lesion_radii_mm=(rx, ry, rz),
            enhancement=float(rng.uniform(*variation.enhancement)),
            window_gain=float(rng.uniform(*variation.gain)),
            window_bias=float(rng.uniform(*variation.bias)),
        ))

    val_target = floor(VAL_FRACTION * n_studies)
    test_target = floor(TEST_FRACTION * n_studies)
    split_of_patient = {}
    val_count = test_count = 0
    for p in rng.permutation(n_patients):
        size = patient_of_study.count(p)
        if val_count < val_target:
            split_of_patient[p] = "val"
            val_count += size
        elif test_count < test_target:
            split_of_patient[p] = "test"
            test_count += size
        else:
            split_of_patient[p] = "train"

    return [
        CohortStudy(
            study_id=f"study{i:03d}",
            patient_id=f"patient{patient_of_study[i]:03d}",
            split=split_of_patient[patient_of_study[i]],
            spec=specs[i],
        )
        for i in range(n_studies)
    ]
