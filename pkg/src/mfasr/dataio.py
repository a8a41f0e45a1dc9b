"""Image I/O, the luma metric, bicubic degradation, augmentation, and a
procedural dataset generator for desk-scale runs.

Images are float32 arrays in channel-first (3, h, w) layout with values
in [0, 1]. Files use binary PPM (P6, maxval 255): trivially parseable,
no external decoders.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError, ShapeError
from .rng import Rng
from .tensor import bicubic_resize_raw

# ITU-R BT.601 studio-swing luma for [0,1] inputs, in [16, 235].
_Y_COEF = (65.481, 128.553, 24.966)
_Y_OFFSET = 16.0

PSNR_CAP_DB = 99.0


# ---------------------------------------------------------------------------
# PPM (P6)

def _next_token(data: bytes, pos: int):
    while pos < len(data):
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header")
    return data[start:pos], pos


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    try:
        magic, pos = _next_token(data, 0)
        if magic != b"P6":
            raise FormatError(f"not a binary PPM (magic {magic!r})")
        w, pos = _next_token(data, pos)
        h, pos = _next_token(data, pos)
        maxval, pos = _next_token(data, pos)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"bad PPM header in {path}: {exc}") from exc
    if maxval != 255:
        raise FormatError(f"only maxval 255 supported, got {maxval}")
    if w < 1 or h < 1:
        raise FormatError(f"bad PPM dimensions {w}x{h}")
    pos += 1  # single whitespace after maxval
    need = w * h * 3
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise FormatError(f"truncated PPM payload: {len(payload)} of {need} bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return (pixels.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()


def save_ppm(img: np.ndarray, path) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"image must be (3, h, w), got {img.shape}")
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    _, h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(q.transpose(1, 2, 0).tobytes())


def quantize8(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid, exactly what a PPM round-trip produces."""
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


# ---------------------------------------------------------------------------
# metric

def to_y(img: np.ndarray) -> np.ndarray:
    """Luma plane in [16, 235]; accepts (3,h,w) or (n,3,h,w), returns
    (1,1,h,w) or (n,1,h,w) in double precision."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img[None]
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"expected an RGB image, got shape {img.shape}")
    r, g, b = img[:, 0], img[:, 1], img[:, 2]
    y = _Y_OFFSET + _Y_COEF[0] * r + _Y_COEF[1] * g + _Y_COEF[2] * b
    return y[:, None]


def psnr_y(a: np.ndarray, b: np.ndarray, border: int = 0) -> float:
    """Peak signal-to-noise ratio on the luma plane, capped at 99 dB.

    ``border`` pixels are cropped from every side before comparison.
    """
    ya, yb = to_y(a), to_y(b)
    if ya.shape != yb.shape:
        raise ShapeError(f"image dims differ: {ya.shape} vs {yb.shape}")
    if border:
        if 2 * border >= min(ya.shape[2], ya.shape[3]):
            raise ShapeError(f"border {border} leaves no pixels")
        ya = ya[:, :, border:-border, border:-border]
        yb = yb[:, :, border:-border, border:-border]
    mse = float(((ya - yb) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(255.0 ** 2 / mse), PSNR_CAP_DB)


# ---------------------------------------------------------------------------
# degradation / upscale baseline

def degrade_bicubic(hr: np.ndarray, scale: int) -> np.ndarray:
    """Antialiased bicubic downscale, the LR side of every training pair."""
    hr = np.asarray(hr)
    _, h, w = hr.shape
    if h % scale or w % scale:
        raise ShapeError(f"dims {h}x{w} not divisible by scale {scale}")
    out = bicubic_resize_raw(hr[None], h // scale, w // scale, antialias=True)[0]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def upscale_bicubic(lr: np.ndarray, scale: int) -> np.ndarray:
    """Plain bicubic upscale, the no-learning baseline."""
    lr = np.asarray(lr)
    _, h, w = lr.shape
    out = bicubic_resize_raw(lr[None], h * scale, w * scale, antialias=False)[0]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# augmentation / patch sampling

def augment(patch: np.ndarray, rng: Rng) -> np.ndarray:
    """Random h-flip, v-flip, and quarter-turn of a square patch."""
    if patch.shape[-1] != patch.shape[-2]:
        raise ShapeError(f"augment needs a square patch, got {patch.shape}")
    out = patch
    if rng.integers(0, 2):
        out = out[:, :, ::-1]
    if rng.integers(0, 2):
        out = out[:, ::-1, :]
    k = int(rng.integers(0, 4))
    if k:
        out = np.rot90(out, k, axes=(1, 2))
    return np.ascontiguousarray(out)


def sample_patch(hr: np.ndarray, patch: int, rng: Rng) -> np.ndarray:
    _, h, w = hr.shape
    if patch > h or patch > w:
        raise ShapeError(f"patch {patch} exceeds image {h}x{w}")
    top = int(rng.integers(0, h - patch + 1))
    left = int(rng.integers(0, w - patch + 1))
    return hr[:, top:top + patch, left:left + patch]


# ---------------------------------------------------------------------------
# procedural dataset

def _synth_image(rng: Rng, size: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, size),
                         np.linspace(0.0, 1.0, size), indexing="ij")
    pattern = rng.uniform(-0.3, 0.3) + rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy
    for _ in range(int(rng.integers(2, 5))):
        freq = rng.uniform(1.0, size / 4.0)
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2 * np.pi)
        amp = rng.uniform(0.2, 0.7)
        pattern = pattern + amp * np.sin(
            2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    for _ in range(int(rng.integers(1, 4))):
        t = int(rng.integers(0, size - 2))
        l = int(rng.integers(0, size - 2))
        hh = int(rng.integers(2, size - t + 1))
        ww = int(rng.integers(2, size - l + 1))
        pattern[t:t + hh, l:l + ww] += rng.uniform(-0.8, 0.8)
    lo, hi = pattern.min(), pattern.max()
    if hi - lo < 1e-6:
        pattern = pattern + xx  # degenerate flat draw, force a ramp
        lo, hi = pattern.min(), pattern.max()
    base = (pattern - lo) / (hi - lo)
    img = np.empty((3, size, size), dtype=np.float32)
    for c in range(3):
        gain = rng.uniform(0.6, 1.0)
        tint = rng.uniform(0.0, 1.0 - gain)
        img[c] = gain * base + tint
    return np.clip(img, 0.0, 1.0)


def synth_dataset(seed: int, count: int, hr_size: int, scale: int):
    """Seeded procedural (lr, hr) pairs: oriented sinusoids, gradients,
    and sharp rectangles, quantized to the 8-bit grid like file I/O."""
    if hr_size % scale:
        raise ShapeError(f"hr_size {hr_size} not divisible by scale {scale}")
    root = Rng(seed)
    pairs = []
    for i in range(count):
        hr = quantize8(_synth_image(root.split(i), hr_size))
        lr = quantize8(degrade_bicubic(hr, scale))
        pairs.append((lr, hr))
    return pairs


# ---------------------------------------------------------------------------
# dataset directories: <root>/hr/*.ppm with optional <root>/lr/*.ppm

def write_dataset(pairs, root) -> None:
    os.makedirs(os.path.join(root, "hr"), exist_ok=True)
    os.makedirs(os.path.join(root, "lr"), exist_ok=True)
    for i, (lr, hr) in enumerate(pairs):
        save_ppm(hr, os.path.join(root, "hr", f"{i:04d}.ppm"))
        save_ppm(lr, os.path.join(root, "lr", f"{i:04d}.ppm"))


def load_dataset(root, scale: int):
    """Load (lr, hr) pairs; missing LR files are degraded from HR and
    cached beside the originals."""
    hr_dir = os.path.join(root, "hr")
    lr_dir = os.path.join(root, "lr")
    if not os.path.isdir(hr_dir):
        raise FormatError(f"dataset root {root} has no hr/ directory")
    names = sorted(n for n in os.listdir(hr_dir) if n.endswith(".ppm"))
    if not names:
        raise FormatError(f"no .ppm files under {hr_dir}")
    os.makedirs(lr_dir, exist_ok=True)
    pairs = []
    for name in names:
        hr = load_ppm(os.path.join(hr_dir, name))
        lr_path = os.path.join(lr_dir, name)
        if os.path.exists(lr_path):
            lr = load_ppm(lr_path)
        else:
            lr = quantize8(degrade_bicubic(hr, scale))
            save_ppm(lr, lr_path)
        pairs.append((lr, hr))
    return pairs


def make_batch(pairs, indices) -> tuple[np.ndarray, np.ndarray]:
    lr = np.stack([pairs[i][0] for i in indices]).astype(np.float32)
    hr = np.stack([pairs[i][1] for i in indices]).astype(np.float32)
    return lr, hr
