"""Desk-scale restoration network: conv encoder + shift-modulated coordinate MLP.

The encoder maps an image patch to per-pixel modulation codes through C
3x3 stride-1 zero-padded convolutions (tanh between layers). The decoder is
a fully connected network on normalized pixel coordinates whose hidden
pre-activations receive additive shifts projected from the pixel's code
(sine activations). Training minimizes l1 + optional least-squares
adversarial loss + l2 weight regularization under Adam; when the
adversarial term is active the discriminator follows the two time-scale
rule with its own (larger) learning rate.

All arithmetic runs in float64; parameters are stored as float32, which is
also the checkpoint precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError

CHECKPOINT_FORMAT = "lowdose-checkpoint-v1"

DISC_CHANNELS = (8, 16)


@dataclass(frozen=True)
class ArchConfig:
    """(C, m, D, h, channels): conv layers, code channels, decoder depth, width, input channels."""

    conv_layers: int = 2
    code_channels: int = 8
    decoder_layers: int = 3
    hidden_width: int = 32
    channels: int = 1

    def __post_init__(self):
        if self.conv_layers < 1 or self.code_channels < 1 or self.hidden_width < 1:
            raise ConfigError(f"architecture sizes must be positive: {self}")
        if self.decoder_layers < 2:
            raise ConfigError("decoder needs at least one hidden layer plus the output layer")
        if self.channels not in (1, 2):
            raise ConfigError(f"input channels must be 1 or 2, got {self.channels}")


@dataclass(frozen=True)
class Augment:
    flip_h: bool = True
    flip_v: bool = True
    shift_max_px: int = 4
    crop: bool = True


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 16
    patch_hw: tuple[int, int] = (32, 40)
    lr_g: float = 1e-4
    lr_d: float = 4e-4  # two time-scale rule: discriminator runs 4x faster by default
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    lambda_adv: float = 0.0
    lambda_reg: float = 1e-5
    seed: int = 0
    augment: Augment = Augment()

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ConfigError(f"steps and batch must be >= 1, got {self.steps}, {self.batch}")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError(f"learning rates must be positive, got {self.lr_g}, {self.lr_d}")
        if self.lambda_adv < 0 or self.lambda_reg < 0:
            raise ConfigError("loss weights must be non-negative")
        if min(self.patch_hw) < 2:
            raise ConfigError(f"patch must be at least 2x2, got {self.patch_hw}")


@dataclass
class TrainHistory:
    step: list[int] = field(default_factory=list)
    l1_loss: list[float] = field(default_factory=list)
    adv_loss: list[float] = field(default_factory=list)
    reg_loss: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)

    def append(self, step: int, l1: float, adv: float, reg: float, total: float) -> None:
        self.step.append(step)
        self.l1_loss.append(l1)
        self.adv_loss.append(adv)
        self.reg_loss.append(reg)
        self.total.append(total)

    def __len__(self) -> int:
        return len(self.step)


@dataclass
class ModelParams:
    """Named parameter arrays (float32) in the documented traversal order."""

    arch: ArchConfig
    params: dict[str, np.ndarray]
    disc: dict[str, np.ndarray] | None = None
    seed: int = 0
    steps_trained: int = 0


def _generator_shapes(arch: ArchConfig) -> list[tuple[str, tuple, int]]:
    """(name, shape, fan_in) in traversal order."""
    shapes = []
    in_ch = arch.channels
    for i in range(arch.conv_layers):
        fan = in_ch * 9
        shapes.append((f"enc{i}.w", (arch.code_channels, in_ch, 3, 3), fan))
        shapes.append((f"enc{i}.b", (arch.code_channels,), fan))
        in_ch = arch.code_channels
    width_in = 2
    for j in range(arch.decoder_layers):
        last = j == arch.decoder_layers - 1
        out = 1 if last else arch.hidden_width
        shapes.append((f"dec{j}.w", (out, width_in), width_in))
        shapes.append((f"dec{j}.b", (out,), width_in))
        if not last:
            shapes.append((f"mod{j}.w", (arch.hidden_width, arch.code_channels),
                           arch.code_channels))
        width_in = arch.hidden_width
    return shapes


def _disc_shapes() -> list[tuple[str, tuple, int]]:
    c0, c1 = DISC_CHANNELS
    return [
        ("disc.conv0.w", (c0, 1, 3, 3), 9),
        ("disc.conv0.b", (c0,), 9),
        ("disc.conv1.w", (c1, c0, 3, 3), c0 * 9),
        ("disc.conv1.b", (c1,), c0 * 9),
        ("disc.fc.w", (1, c1), c1),
        ("disc.fc.b", (1,), c1),
    ]


def parameter_count(arch: ArchConfig, with_discriminator: bool = False) -> int:
    shapes = _generator_shapes(arch)
    if with_discriminator:
        shapes = shapes + _disc_shapes()
    return sum(int(np.prod(shape)) for _, shape, _ in shapes)


def _init_tensors(shapes, rng) -> dict[str, np.ndarray]:
    out = {}
    for name, shape, fan_in in shapes:
        bound = 1.0 / np.sqrt(fan_in)
        out[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return out


def init_model(arch: ArchConfig, seed: int) -> ModelParams:
    """Seeded uniform fan-in initialization (bound 1/sqrt(fan_in)) for all tensors."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return ModelParams(arch=arch, params=_init_tensors(_generator_shapes(arch), rng), seed=seed)


def init_discriminator(seed: int) -> dict[str, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return _init_tensors(_disc_shapes(), rng)


# -- convolution primitives --
# Math follows the dtype of the activations: training feeds float32 for
# speed, the gradient-oracle tests feed float64 for finite-difference
# precision.

def _cast(param: np.ndarray, like: np.ndarray) -> np.ndarray:
    return param.astype(like.dtype, copy=False)


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """3x3 convolution with zero padding 1 over (B, C, H, W)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bchwij,ocij->bohw", win, _cast(w, x), optimize=True)
    return out + _cast(b, x)[None, :, None, None]


def _conv2d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray, stride: int = 1):
    """Gradients (dw, db, dx) of _conv2d at (x, w)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    dw = np.einsum("bohw,bchwij->ocij", dy, win, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dxp = np.zeros(xp.shape, dtype=dy.dtype)
    wc = _cast(w, dy)
    ho, wo = dy.shape[2], dy.shape[3]
    for i in range(3):
        for j in range(3):
            term = np.einsum("bohw,oc->bchw", dy, wc[:, :, i, j], optimize=True)
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += term
    dx = dxp[:, :, 1:-1, 1:-1]
    return dw, db, dx


# -- forward passes --

def axis_coords(n: int) -> np.ndarray:
    """Regular grid coordinates of one axis, normalized to [-1, 1]."""
    if n == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n)


def coordinate_grid(h: int, w: int) -> np.ndarray:
    """(h, w, 2) grid of (row, col) coordinates, each axis in [-1, 1]."""
    ys = axis_coords(h)
    xs = axis_coords(w)
    grid = np.empty((h, w, 2))
    grid[..., 0] = ys[:, None]
    grid[..., 1] = xs[None, :]
    return grid


def _as_batched_input(patch: np.ndarray, channels: int) -> np.ndarray:
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim == 2:
        patch = patch[None, :, :]
    if patch.ndim != 3 or patch.shape[0] != channels:
        raise DataError(f"expected {channels}-channel patch, got shape {patch.shape}")
    return patch[None]


def _encode_batch(p: ModelParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Codes (B, m, H, W) plus cached activations for backprop."""
    acts = [x]
    a = x
    n = p.arch.conv_layers
    for i in range(n):
        z = _conv2d(a, p.params[f"enc{i}.w"], p.params[f"enc{i}.b"])
        a = np.tanh(z) if i < n - 1 else z
        acts.append(a)
    return a, acts


def _decode_batch(p: ModelParams, codes_flat: np.ndarray, coords_flat: np.ndarray):
    """Per-point decode with cached pre-activations; returns (out (P,), cache)."""
    us = [coords_flat]
    zs = []
    a = coords_flat
    last = p.arch.decoder_layers - 1
    for j in range(last):
        z = (a @ _cast(p.params[f"dec{j}.w"].T, a)
             + _cast(p.params[f"dec{j}.b"], a)
             + codes_flat @ _cast(p.params[f"mod{j}.w"].T, a))
        a = np.sin(z)
        zs.append(z)
        us.append(a)
    out = a @ _cast(p.params[f"dec{last}.w"].T, a) + _cast(p.params[f"dec{last}.b"], a)
    return out[:, 0], (us, zs)


def encode(p: ModelParams, patch: np.ndarray) -> np.ndarray:
    """Per-pixel modulation codes (m, H, W) for one patch."""
    codes, _ = _encode_batch(p, _as_batched_input(patch, p.arch.channels))
    return codes[0]


def decode(p: ModelParams, codes: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Decode intensities at arbitrary query points given their codes.

    ``codes`` is (..., m) and ``coords`` (..., 2); the result has the shared
    leading shape. The decoder is pointwise, so sub-grid queries agree with
    the corresponding entries of a full-grid forward pass.
    """
    codes = np.asarray(codes, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    if codes.shape[:-1] != coords.shape[:-1]:
        raise DataError(f"codes {codes.shape} and coords {coords.shape} do not align")
    lead = codes.shape[:-1]
    out, _ = _decode_batch(p, codes.reshape(-1, codes.shape[-1]), coords.reshape(-1, 2))
    return out.reshape(lead)


def forward(p: ModelParams, patch: np.ndarray, coords: np.ndarray | None = None) -> np.ndarray:
    """Restored intensities for one patch on its regular coordinate grid."""
    x = _as_batched_input(patch, p.arch.channels)
    h, w = x.shape[2], x.shape[3]
    if coords is None:
        coords = coordinate_grid(h, w)
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (h, w, 2):
        raise DataError(f"coords shape {coords.shape} does not match patch {(h, w)}")
    codes, _ = _encode_batch(p, x)
    codes_flat = np.moveaxis(codes[0], 0, -1).reshape(-1, p.arch.code_channels)
    out, _ = _decode_batch(p, codes_flat, coords.reshape(-1, 2))
    return out.reshape(h, w)


def _forward_training(p: ModelParams, x: np.ndarray):
    """Batched forward pass keeping every intermediate needed for backprop."""
    b, _, h, w = x.shape
    codes, enc_acts = _encode_batch(p, x)
    codes_flat = np.moveaxis(codes, 1, -1).reshape(-1, p.arch.code_channels)
    grid = coordinate_grid(h, w).astype(x.dtype).reshape(1, -1, 2)
    coords_flat = np.broadcast_to(grid, (b, h * w, 2)).reshape(-1, 2)
    out, dec_cache = _decode_batch(p, codes_flat, coords_flat)
    pred = out.reshape(b, h, w)
    return pred, (enc_acts, codes_flat, dec_cache)


# -- discriminator --

def _disc_forward(disc: dict[str, np.ndarray], y: np.ndarray):
    """Patch scores (B,) for (B, 1, H, W) input, with cache."""
    c0 = np.tanh(_conv2d(y, disc["disc.conv0.w"], disc["disc.conv0.b"], stride=2))
    c1 = np.tanh(_conv2d(c0, disc["disc.conv1.w"], disc["disc.conv1.b"], stride=2))
    pooled = c1.mean(axis=(2, 3))
    scores = pooled @ _cast(disc["disc.fc.w"].T, pooled) + _cast(disc["disc.fc.b"], pooled)
    return scores[:, 0], (y, c0, c1, pooled)


def _disc_backward(disc: dict[str, np.ndarray], cache, dscores: np.ndarray,
                   grads: dict[str, np.ndarray] | None):
    """Backprop scores -> input; accumulates parameter grads when asked."""
    y, c0, c1, pooled = cache
    ds = dscores[:, None]
    if grads is not None:
        grads["disc.fc.w"] += ds.T @ pooled
        grads["disc.fc.b"] += ds.sum(axis=0)
    dpooled = ds @ _cast(disc["disc.fc.w"], ds)
    hw = c1.shape[2] * c1.shape[3]
    dc1 = np.broadcast_to(dpooled[:, :, None, None], c1.shape) / hw
    dz1 = dc1 * (1.0 - c1 * c1)
    dw1, db1, dc0 = _conv2d_backward(c0, disc["disc.conv1.w"], dz1, stride=2)
    dz0 = dc0 * (1.0 - c0 * c0)
    dw0, db0, dy = _conv2d_backward(y, disc["disc.conv0.w"], dz0, stride=2)
    if grads is not None:
        grads["disc.conv1.w"] += dw1
        grads["disc.conv1.b"] += db1
        grads["disc.conv0.w"] += dw0
        grads["disc.conv0.b"] += db0
    return dy


# -- losses and gradients --

def _weight_keys(params: dict[str, np.ndarray]) -> list[str]:
    return [k for k in params if k.endswith(".w")]


def _reg_term(p: ModelParams, cfg: TrainConfig) -> float:
    return cfg.lambda_reg * sum(float((p.params[k].astype(np.float64) ** 2).sum())
                                for k in _weight_keys(p.params))


def loss(pred: np.ndarray, target: np.ndarray, p: ModelParams,
         cfg: TrainConfig) -> tuple[float, float, float, float]:
    """(total, l1, adv, reg) of the generator objective for given predictions."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DataError(f"pred {pred.shape} and target {target.shape} differ in shape")
    l1 = float(np.mean(np.abs(pred - target), dtype=np.float64))
    reg = _reg_term(p, cfg)
    adv = 0.0
    if cfg.lambda_adv > 0:
        if p.disc is None:
            raise ConfigError("lambda_adv > 0 requires a discriminator")
        if pred.ndim not in (2, 3):
            raise DataError("adversarial loss needs (H, W) or (B, H, W) predictions")
        scores, _ = _disc_forward(p.disc, pred.reshape(-1, 1, *pred.shape[-2:]))
        adv = cfg.lambda_adv * float(np.mean((scores - 1.0) ** 2, dtype=np.float64))
    return l1 + adv + reg, l1, adv, reg


def train_loss(p: ModelParams, x: np.ndarray, target: np.ndarray,
               cfg: TrainConfig) -> tuple[float, float, float, float]:
    """Generator objective evaluated from batch inputs (B, C, H, W)."""
    pred, _ = _forward_training(p, np.asarray(x))
    return loss(pred, target, p, cfg)


def backward(p: ModelParams, x: np.ndarray, target: np.ndarray,
             cfg: TrainConfig) -> tuple[dict[str, np.ndarray], tuple[float, float, float, float]]:
    """Analytic gradients of the generator objective for every generator parameter."""
    x = np.asarray(x)
    target = np.asarray(target, dtype=x.dtype)
    pred, (enc_acts, codes_flat, dec_cache) = _forward_training(p, x)
    if pred.shape != target.shape:
        raise DataError(f"pred {pred.shape} and target {target.shape} differ in shape")
    b, h, w = pred.shape
    n_pix = pred.size

    l1 = float(np.mean(np.abs(pred - target), dtype=np.float64))
    reg = _reg_term(p, cfg)
    dpred = np.sign(pred - target) / x.dtype.type(n_pix)  # l1 subgradient, 0 at exact ties

    adv = 0.0
    if cfg.lambda_adv > 0:
        if p.disc is None:
            raise ConfigError("lambda_adv > 0 requires a discriminator")
        scores, cache = _disc_forward(p.disc, pred[:, None, :, :])
        adv = cfg.lambda_adv * float(np.mean((scores - 1.0) ** 2, dtype=np.float64))
        dscores = (cfg.lambda_adv * 2.0 / b) * (scores - 1.0)
        dpred = dpred + _disc_backward(p.disc, cache, dscores, grads=None)[:, 0, :, :]

    grads = {k: np.zeros(v.shape, dtype=x.dtype) for k, v in p.params.items()}

    # Decoder backward.
    us, zs = dec_cache
    last = p.arch.decoder_layers - 1
    dout = dpred.reshape(-1, 1)
    grads[f"dec{last}.w"] += dout.T @ us[-1]
    grads[f"dec{last}.b"] += dout.sum(axis=0)
    du = dout @ _cast(p.params[f"dec{last}.w"], dout)
    dcodes_flat = np.zeros_like(codes_flat)
    for j in range(last - 1, -1, -1):
        dz = du * np.cos(zs[j])
        grads[f"dec{j}.w"] += dz.T @ us[j]
        grads[f"dec{j}.b"] += dz.sum(axis=0)
        grads[f"mod{j}.w"] += dz.T @ codes_flat
        dcodes_flat += dz @ _cast(p.params[f"mod{j}.w"], dz)
        du = dz @ _cast(p.params[f"dec{j}.w"], dz)

    # Encoder backward.
    m = p.arch.code_channels
    da = np.moveaxis(dcodes_flat.reshape(b, h, w, m), -1, 1)
    n_conv = p.arch.conv_layers
    for i in range(n_conv - 1, -1, -1):
        if i < n_conv - 1:
            da = da * (1.0 - enc_acts[i + 1] ** 2)  # tanh applied after this layer
        dw, db, da = _conv2d_backward(enc_acts[i], p.params[f"enc{i}.w"], da)
        grads[f"enc{i}.w"] += dw
        grads[f"enc{i}.b"] += db

    for k in _weight_keys(p.params):
        grads[k] += x.dtype.type(2.0 * cfg.lambda_reg) * _cast(p.params[k], grads[k])

    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter {name}")
    return grads, (l1 + adv + reg, l1, adv, reg)


def discriminator_loss(disc: dict[str, np.ndarray], real: np.ndarray,
                       fake: np.ndarray) -> float:
    """Least-squares discriminator objective on (B, H, W) batches."""
    s_real, _ = _disc_forward(disc, np.asarray(real)[:, None, :, :])
    s_fake, _ = _disc_forward(disc, np.asarray(fake)[:, None, :, :])
    return (0.5 * float(np.mean((s_real - 1.0) ** 2, dtype=np.float64))
            + 0.5 * float(np.mean(s_fake**2, dtype=np.float64)))


def discriminator_backward(disc: dict[str, np.ndarray], real: np.ndarray,
                           fake: np.ndarray) -> tuple[dict[str, np.ndarray], float]:
    """Analytic gradients of the least-squares discriminator objective."""
    real = np.asarray(real)[:, None, :, :]
    fake = np.asarray(fake, dtype=real.dtype)[:, None, :, :]
    b = real.shape[0]
    grads = {k: np.zeros(v.shape, dtype=real.dtype) for k, v in disc.items()}
    s_real, cache_r = _disc_forward(disc, real)
    s_fake, cache_f = _disc_forward(disc, fake)
    _disc_backward(disc, cache_r, (s_real - 1.0) / b, grads)
    _disc_backward(disc, cache_f, s_fake / b, grads)
    value = (0.5 * float(np.mean((s_real - 1.0) ** 2, dtype=np.float64))
             + 0.5 * float(np.mean(s_fake**2, dtype=np.float64)))
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter {name}")
    return grads, value


# -- optimization --

class _Adam:
    def __init__(self, shapes: dict[str, tuple], lr: float, betas: tuple[float, float], eps: float):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(s, dtype=np.float64) for k, s in shapes.items()}
        self.v = {k: np.zeros(s, dtype=np.float64) for k, s in shapes.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            m_hat = self.m[k] / (1.0 - self.b1**self.t)
            v_hat = self.v[k] / (1.0 - self.b2**self.t)
            new = params[k].astype(np.float64) - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            params[k] = new.astype(np.float32)


# -- training --

def _collect_slices(dataset, channels: int, patch_hw: tuple[int, int]):
    slices = []
    for pair in dataset:
        if len(pair) == 2:
            vin, vtgt, vaux = pair[0], pair[1], None
        else:
            vin, vtgt, vaux = pair
        if vin.dims != vtgt.dims or (vaux is not None and vaux.dims != vin.dims):
            raise DataError(f"training pair volumes disagree on dims: {vin.dims} vs {vtgt.dims}")
        if channels == 2 and vaux is None:
            raise ConfigError("two-channel architecture needs the auxiliary pre-contrast volume")
        nz = vin.data.shape[0]
        for z in range(nz):
            h, w = vin.data.shape[1], vin.data.shape[2]
            if h < patch_hw[0] or w < patch_hw[1]:
                raise DataError(f"slice {h}x{w} smaller than training patch {patch_hw}")
            # float32 keeps the training math fast; values are already f32.
            slices.append((
                vin.data[z],
                vtgt.data[z],
                vaux.data[z] if vaux is not None else None,
            ))
    if not slices:
        raise DataError("empty training dataset")
    return slices


def _sample_patch(slices, rng, cfg: TrainConfig):
    ph, pw = cfg.patch_hw
    aug = cfg.augment
    sin, star, saux = slices[int(rng.integers(len(slices)))]
    if aug.flip_h and rng.random() < 0.5:
        sin, star = sin[:, ::-1], star[:, ::-1]
        saux = saux[:, ::-1] if saux is not None else None
    if aug.flip_v and rng.random() < 0.5:
        sin, star = sin[::-1, :], star[::-1, :]
        saux = saux[::-1, :] if saux is not None else None
    h, w = sin.shape
    r = int(rng.integers(h - ph + 1)) if aug.crop else (h - ph) // 2
    c = int(rng.integers(w - pw + 1)) if aug.crop else (w - pw) // 2
    if aug.shift_max_px > 0:
        # Shift composes with the crop: the window origin moves, clamped in-bounds.
        r = int(np.clip(r + rng.integers(-aug.shift_max_px, aug.shift_max_px + 1), 0, h - ph))
        c = int(np.clip(c + rng.integers(-aug.shift_max_px, aug.shift_max_px + 1), 0, w - pw))
    x = sin[r:r + ph, c:c + pw]
    if saux is not None:
        x = np.stack([x, saux[r:r + ph, c:c + pw]])
    else:
        x = x[None]
    return x, star[r:r + ph, c:c + pw]


def train(dataset, cfg: TrainConfig, arch: ArchConfig | None = None) -> tuple[ModelParams, TrainHistory]:
    """Train a restoration model; bit-reproducible for a given (dataset, cfg).

    ``dataset`` is a list of (input, target) or (input, target, aux) Volume
    tuples; batches are random augmented 2D patches. One Adam update per
    step for the generator and, iff lambda_adv > 0, one for the
    discriminator (both evaluated against the pre-update parameters).
    """
    arch = arch or ArchConfig()
    slices = _collect_slices(dataset, arch.channels, cfg.patch_hw)

    ss = np.random.SeedSequence(cfg.seed)
    init_child, disc_child, sample_child = ss.spawn(3)
    p = init_model(arch, seed=int(init_child.generate_state(1)[0]))
    p.seed = cfg.seed
    if cfg.lambda_adv > 0:
        p.disc = init_discriminator(seed=int(disc_child.generate_state(1)[0]))
    rng = np.random.Generator(np.random.PCG64(sample_child))

    opt_g = _Adam({k: v.shape for k, v in p.params.items()}, cfg.lr_g, cfg.adam_betas, cfg.adam_eps)
    opt_d = None
    if p.disc is not None:
        opt_d = _Adam({k: v.shape for k, v in p.disc.items()}, cfg.lr_d, cfg.adam_betas, cfg.adam_eps)

    history = TrainHistory()
    for step in range(1, cfg.steps + 1):
        batch = [_sample_patch(slices, rng, cfg) for _ in range(cfg.batch)]
        x = np.stack([bx for bx, _ in batch])
        t = np.stack([bt for _, bt in batch])

        grads, (total, l1, adv, reg) = backward(p, x, t, cfg)
        if not np.isfinite(total):
            raise NumericError(f"non-finite loss at step {step}: {total}")
        if p.disc is not None:
            pred, _ = _forward_training(p, x)
            d_grads, _ = discriminator_backward(p.disc, t, pred)
            opt_d.step(p.disc, d_grads)
        opt_g.step(p.params, grads)
        history.append(step, l1, adv, reg, total)

    p.steps_trained = cfg.steps
    return p, history


# -- checkpoint and history serialization --

def _all_shapes(p: ModelParams) -> list[tuple[str, tuple]]:
    shapes = [(name, shape) for name, shape, _ in _generator_shapes(p.arch)]
    if p.disc is not None:
        shapes += [(name, shape) for name, shape, _ in _disc_shapes()]
    return shapes


def save_checkpoint(p: ModelParams, history: TrainHistory | None, path: str | Path) -> None:
    """Text header + raw little-endian float32 block in traversal order.

    When a history is given its CSV lands next to the checkpoint with the
    suffix ``.history.csv``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    a = p.arch
    count = parameter_count(a, with_discriminator=p.disc is not None)
    header = (
        f"format={CHECKPOINT_FORMAT}\n"
        f"arch={a.conv_layers},{a.code_channels},{a.decoder_layers},{a.hidden_width},{a.channels}\n"
        f"seed={p.seed}\n"
        f"steps={p.steps_trained if history is None else len(history)}\n"
        f"discriminator={0 if p.disc is None else 1}\n"
        f"param_count={count}\n"
        "\n"
    )
    blocks = []
    source = {**p.params, **(p.disc or {})}
    for name, _ in _all_shapes(p):
        blocks.append(source[name].astype("<f4").tobytes())
    path.write_bytes(header.encode("utf-8") + b"".join(blocks))
    if history is not None:
        save_history_csv(history, path.with_name(path.name + ".history.csv"))


def load_checkpoint(path: str | Path) -> ModelParams:
    """Read a checkpoint, validating format version and parameter count."""
    raw = Path(path).read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise DataError(f"{path}: missing checkpoint header terminator")
    fields = {}
    for line in raw[:sep].decode("utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            fields[k] = v
    if fields.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {fields.get('format')!r}")
    try:
        c, m, d, h, ch = (int(v) for v in fields["arch"].split(","))
        arch = ArchConfig(c, m, d, h, ch)
        seed = int(fields["seed"])
        steps = int(fields["steps"])
        with_disc = fields["discriminator"] == "1"
        declared = int(fields["param_count"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed checkpoint header") from exc
    expected = parameter_count(arch, with_discriminator=with_disc)
    if declared != expected:
        raise DataError(f"{path}: header param_count {declared} != architecture count {expected}")
    payload = raw[sep + 2:]
    if len(payload) != expected * 4:
        raise DataError(f"{path}: parameter block holds {len(payload)} bytes, expected {expected * 4}")

    flat = np.frombuffer(payload, dtype="<f4")
    if not np.isfinite(flat).all():
        raise DataError(f"{path}: checkpoint contains non-finite parameters")
    p = ModelParams(arch=arch, params={}, disc={} if with_disc else None,
                    seed=seed, steps_trained=steps)
    offset = 0
    for name, shape in _all_shapes(p):
        size = int(np.prod(shape))
        arr = flat[offset:offset + size].reshape(shape).astype(np.float32)
        offset += size
        if name.startswith("disc."):
            p.disc[name] = arr
        else:
            p.params[name] = arr
    return p


HISTORY_COLUMNS = ["step", "l1_loss", "adv_loss", "reg_loss", "total"]


def save_history_csv(history: TrainHistory, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for i in range(len(history)):
            writer.writerow([history.step[i], repr(history.l1_loss[i]), repr(history.adv_loss[i]),
                             repr(history.reg_loss[i]), repr(history.total[i])])
