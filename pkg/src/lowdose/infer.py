"""Full-volume restoration by sliding-window inference with Gaussian blending.

Each slice is covered by patches at half-patch stride (final origins clamped
to the slice edge, undersized slices reflect-padded); patch predictions are
blended with a separable Gaussian weight window and the weighted sums are
normalized voxel by voxel, so an identity model reproduces its input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError
from .model import ModelParams, forward
from .volume import Volume

DEFAULT_PATCH_HW = (128, 160)
DEFAULT_SIGMA_FRAC = 0.125
WEIGHT_FLOOR_FRAC = 1e-3


@dataclass(frozen=True)
class WindowPlan:
    """Patch origins covering one (padded) slice plus the padding applied."""

    patch_hw: tuple[int, int]
    stride_hw: tuple[int, int]
    origins: tuple[tuple[int, int], ...]
    pad: tuple[tuple[int, int], tuple[int, int]]  # ((top, bottom), (left, right))


def _axis_origins(length: int, patch: int, stride: int) -> list[int]:
    if length == patch:
        return [0]
    origins = list(range(0, length - patch, stride))
    origins.append(length - patch)
    return origins


def plan_windows(slice_hw: tuple[int, int], patch_hw: tuple[int, int] = DEFAULT_PATCH_HW) -> WindowPlan:
    """Half-stride window origins; undersized axes reflect-pad up to the patch."""
    ph, pw = patch_hw
    if ph < 2 or pw < 2 or ph % 2 or pw % 2:
        raise ConfigError(f"patch sides must be even and >= 2, got {patch_hw}")
    h, w = slice_hw
    pad = []
    padded = []
    for length, patch in ((h, ph), (w, pw)):
        if length < patch:
            total = patch - length
            pad.append((total // 2, total - total // 2))
            padded.append(patch)
        else:
            pad.append((0, 0))
            padded.append(length)
    stride = (ph // 2, pw // 2)
    rows = _axis_origins(padded[0], ph, stride[0])
    cols = _axis_origins(padded[1], pw, stride[1])
    origins = tuple((r, c) for r in rows for c in cols)
    return WindowPlan(patch_hw=(ph, pw), stride_hw=stride, origins=origins,
                      pad=(tuple(pad[0]), tuple(pad[1])))


def gaussian_window(patch_hw: tuple[int, int], sigma_frac: float = DEFAULT_SIGMA_FRAC) -> np.ndarray:
    """Separable Gaussian blending weights, floored so no weight is zero."""
    if sigma_frac <= 0:
        raise ConfigError(f"sigma fraction must be positive, got {sigma_frac}")
    parts = []
    for n in patch_hw:
        center = (n - 1) / 2.0
        sigma = sigma_frac * n
        x = np.arange(n) - center
        parts.append(np.exp(-(x**2) / (2.0 * sigma**2)))
    window = np.outer(parts[0], parts[1])
    return np.maximum(window, WEIGHT_FLOOR_FRAC * window.max())


def _pad_reflect(img: np.ndarray, pad) -> np.ndarray:
    """Reflect-pad, chunked so pads larger than the image size still work."""
    (top, bottom), (left, right) = pad
    out = img
    while top or bottom or left or right:
        h, w = out.shape
        if h == 1 and (top or bottom):  # nothing to mirror on a 1-row axis
            out = np.pad(out, ((top, bottom), (0, 0)), mode="edge")
            top = bottom = 0
            continue
        if w == 1 and (left or right):
            out = np.pad(out, ((0, 0), (left, right)), mode="edge")
            left = right = 0
            continue
        ct, cb = min(top, h - 1), min(bottom, h - 1)
        cl, cr = min(left, w - 1), min(right, w - 1)
        out = np.pad(out, ((ct, cb), (cl, cr)), mode="reflect")
        top, bottom, left, right = top - ct, bottom - cb, left - cl, right - cr
    return out


Predictor = Callable[[np.ndarray], np.ndarray]


def make_predictor(p: ModelParams) -> Predictor:
    """Bind model parameters into a patch -> prediction callable."""
    return lambda patch: forward(p, patch)


def restore_volume(model: ModelParams | Predictor, low: Volume,
                   aux: Volume | None = None,
                   patch_hw: tuple[int, int] = DEFAULT_PATCH_HW,
                   sigma_frac: float = DEFAULT_SIGMA_FRAC) -> Volume:
    """Slide the model over every slice and blend predictions into a volume.

    ``model`` is either trained parameters or any callable mapping a patch
    (2D, or (2, H, W) when ``aux`` is given) to a 2D prediction.
    Accumulation runs in float64 with one final rounding to float32, so the
    result does not depend on patch evaluation order beyond 1 ulp.
    """
    if isinstance(model, ModelParams):
        if (model.arch.channels == 2) != (aux is not None):
            raise DataError(
                f"model expects {model.arch.channels} channel(s); "
                f"aux volume {'missing' if aux is None else 'given'}"
            )
        predict = make_predictor(model)
    else:
        predict = model
    if aux is not None and (aux.dims != low.dims or aux.spacing != low.spacing):
        raise DataError("aux volume must align with the input volume")

    nz = low.data.shape[0]
    slice_hw = low.data.shape[1:]
    plan = plan_windows(slice_hw, patch_hw)
    weights = gaussian_window(plan.patch_hw, sigma_frac)
    (pt, pb), (pl, pr) = plan.pad
    ph, pw = plan.patch_hw

    out = np.empty(low.data.shape, dtype=np.float32)
    for z in range(nz):
        planes = [low.data[z]] + ([aux.data[z]] if aux is not None else [])
        padded = [_pad_reflect(pl_.astype(np.float64), ((pt, pb), (pl, pr)))
                  for pl_ in planes]
        acc = np.zeros(padded[0].shape, dtype=np.float64)
        wsum = np.zeros(padded[0].shape, dtype=np.float64)
        for r, c in plan.origins:
            patch = [pp[r:r + ph, c:c + pw] for pp in padded]
            pred = np.asarray(predict(patch[0] if len(patch) == 1 else np.stack(patch)),
                              dtype=np.float64)
            if pred.shape != (ph, pw):
                raise DataError(f"predictor returned shape {pred.shape}, expected {(ph, pw)}")
            acc[r:r + ph, c:c + pw] += pred * weights
            wsum[r:r + ph, c:c + pw] += weights
        blended = acc / wsum
        h, w = slice_hw
        out[z] = blended[pt:pt + h, pl:pl + w].astype(np.float32)
    return Volume(out, low.spacing, low.unit)
