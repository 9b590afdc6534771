"""Volume/mask data model, container file I/O, cropping and bounding boxes.

Arrays are stored C-ordered and indexed ``data[z, y, x]`` so that x varies
fastest in memory, matching the raw file layout. All user-facing coordinate
tuples (dims, spacing, bounding boxes) are ordered ``(x, y, z)``.

Container format: a UTF-8 header file with ``key=value`` lines
(``dims``, ``spacing``, ``dtype``, ``data``, ``unit``) next to a raw file of
little-endian values in x-fastest order, no padding. Volumes use dtype
``f32``, masks ``u8``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

MASK_LABELS = (0, 1, 2)

_HEADER_KEYS = ("dims", "spacing", "dtype", "data", "unit")


def _lock(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _first_nonfinite(data: np.ndarray) -> tuple[int, int, int]:
    """(x, y, z) index of the first non-finite voxel in x-fastest order."""
    flat = np.flatnonzero(~np.isfinite(data))[0]
    z, y, x = np.unravel_index(flat, data.shape)
    return (int(x), int(y), int(z))


@dataclass(frozen=True)
class Volume:
    """3D scalar grid with physical spacing, immutable after construction.

    ``data`` is float32 indexed ``[z, y, x]``; ``spacing`` is millimeters
    per voxel as ``(sx, sy, sz)``.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    unit: str = "arbitrary"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DataError(f"volume data must be 3D with dims >= 1, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise DataError(f"non-finite value at voxel (x,y,z)={_first_nonfinite(data)}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise DataError(f"spacing must be three positive finite values, got {self.spacing}")
        object.__setattr__(self, "data", _lock(data))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        """Voxel counts (nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    def with_data(self, data: np.ndarray, unit: str | None = None) -> "Volume":
        """New volume sharing spacing, with replaced voxel data."""
        return Volume(data, self.spacing, self.unit if unit is None else unit)


@dataclass(frozen=True)
class Mask:
    """Label volume aligned to a Volume; labels in {0 background, 1 intrameatal, 2 extrameatal}."""

    labels: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise DataError(f"mask labels must be 3D with dims >= 1, got shape {labels.shape}")
        as_u8 = labels.astype(np.uint8)
        if not np.array_equal(as_u8, labels) or int(as_u8.max(initial=0)) > max(MASK_LABELS):
            raise DataError(f"mask labels must lie in {set(MASK_LABELS)}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise DataError(f"spacing must be three positive finite values, got {self.spacing}")
        object.__setattr__(self, "labels", _lock(as_u8))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.labels.shape
        return (nx, ny, nz)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box of inclusive voxel indices, min/max as (x, y, z)."""

    min: tuple[int, int, int]
    max: tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.min)
        hi = tuple(int(v) for v in self.max)
        if len(lo) != 3 or len(hi) != 3 or any(a > b for a, b in zip(lo, hi)) or min(lo) < 0:
            raise DataError(f"invalid bounding box {lo}..{hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Extents (nx, ny, nz) of the box."""
        return tuple(b - a + 1 for a, b in zip(self.min, self.max))

    def inside(self, dims: tuple[int, int, int]) -> bool:
        return all(b < d for b, d in zip(self.max, dims))


def _parse_header(path: Path) -> dict:
    if not path.is_file():
        raise DataError(f"missing header file: {path}")
    fields = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"malformed header line in {path}: {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise DataError(f"header {path} missing keys: {missing}")
    return fields


def _read_container(path: str | Path, expect_dtype: str) -> tuple[np.ndarray, tuple, str]:
    path = Path(path)
    fields = _parse_header(path)
    try:
        nx, ny, nz = (int(v) for v in fields["dims"].split(","))
        spacing = tuple(float(v) for v in fields["spacing"].split(","))
    except ValueError as exc:
        raise DataError(f"unparseable dims/spacing in {path}") from exc
    if min(nx, ny, nz) < 1:
        raise DataError(f"non-positive dims in {path}: {fields['dims']}")
    if fields["dtype"] != expect_dtype:
        raise DataError(f"{path}: expected dtype={expect_dtype}, found {fields['dtype']}")
    raw_path = path.parent / fields["data"]
    if not raw_path.is_file():
        raise DataError(f"missing raw file: {raw_path}")
    dtype = np.dtype("<f4") if expect_dtype == "f32" else np.dtype("u1")
    expected = nx * ny * nz * dtype.itemsize
    actual = raw_path.stat().st_size
    if actual != expected:
        raise DataError(
            f"{raw_path}: raw size {actual} bytes does not match dims "
            f"{nx}x{ny}x{nz} ({expected} bytes)"
        )
    data = np.fromfile(raw_path, dtype=dtype).reshape(nz, ny, nx)
    return data, spacing, fields["unit"]


def read_volume(path: str | Path) -> Volume:
    """Read a float32 volume from a container header file."""
    data, spacing, unit = _read_container(path, "f32")
    if not np.isfinite(data).all():
        raise DataError(f"{path}: non-finite value at voxel (x,y,z)={_first_nonfinite(data)}")
    return Volume(data, spacing, unit)


def read_mask(path: str | Path) -> Mask:
    """Read a uint8 label mask from a container header file."""
    data, spacing, _ = _read_container(path, "u8")
    return Mask(data, spacing)


def _write_container(path: Path, dims, spacing, dtype: str, unit: str, raw_bytes: bytes) -> None:
    raw_name = path.stem + ".raw"
    header = (
        f"dims={dims[0]},{dims[1]},{dims[2]}\n"
        f"spacing={spacing[0]!r},{spacing[1]!r},{spacing[2]!r}\n"
        f"dtype={dtype}\n"
        f"data={raw_name}\n"
        f"unit={unit}\n"
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(header, encoding="utf-8")
    (path.parent / raw_name).write_bytes(raw_bytes)


def write_volume(v: Volume, path: str | Path) -> None:
    """Write a volume as header + raw pair; deterministic bytes for equal inputs."""
    path = Path(path)
    _write_container(path, v.dims, v.spacing, "f32", v.unit,
                     v.data.astype("<f4").tobytes())


def write_mask(m: Mask, path: str | Path) -> None:
    """Write a mask as header + raw pair with u8 payload."""
    path = Path(path)
    _write_container(path, m.dims, m.spacing, "u8", "labels",
                     m.labels.astype("u1").tobytes())


def mask_bounding_box(m: Mask, labels: set[int] | frozenset[int] = frozenset({1, 2})) -> BoundingBox:
    """Tightest box containing all voxels whose label is in ``labels``."""
    sel = np.isin(m.labels, sorted(labels))
    if not sel.any():
        raise DataError(f"empty mask: no voxel carries a label in {sorted(labels)}")
    zs, ys, xs = np.nonzero(sel)
    return BoundingBox(
        (int(xs.min()), int(ys.min()), int(zs.min())),
        (int(xs.max()), int(ys.max()), int(zs.max())),
    )


def crop(v: Volume, box: BoundingBox) -> Volume:
    """Sub-volume over the inclusive box; spacing preserved."""
    if not box.inside(v.dims):
        raise DataError(f"box {box.min}..{box.max} exceeds dims {v.dims}")
    (x0, y0, z0), (x1, y1, z1) = box.min, box.max
    return Volume(v.data[z0:z1 + 1, y0:y1 + 1, x0:x1 + 1].copy(), v.spacing, v.unit)


def export_slice_pgm(v: Volume, z: int, path: str | Path,
                     lo: float | None = None, hi: float | None = None) -> None:
    """Export one z-slice as 16-bit PGM (P5) with linear windowing.

    The window is stated in the PGM comment line so the mapping stays
    inspectable. Values are clipped to [lo, hi].
    """
    nx, ny, nz = v.dims
    if not 0 <= z < nz:
        raise DataError(f"slice index {z} out of range for nz={nz}")
    sl = v.data[z].astype(np.float64)
    lo = float(sl.min()) if lo is None else float(lo)
    hi = float(sl.max()) if hi is None else float(hi)
    if not hi > lo:
        raise DataError(f"window must satisfy hi > lo, got lo={lo} hi={hi}")
    scaled = np.clip((sl - lo) / (hi - lo), 0.0, 1.0)
    pixels = np.round(scaled * 65535.0).astype(">u2")
    header = f"P5\n# window lo={lo!r} hi={hi!r}\n{nx} {ny}\n65535\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header.encode("ascii") + pixels.tobytes())
