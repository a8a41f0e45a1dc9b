"""Dense NCHW tensors and the numeric kernels everything else builds on.

The public operations take and return :class:`Tensor`; the ``*_raw``
functions work on bare numpy arrays and are what the execution engine
calls in its inner loops. All operations are pure and deterministic:
same inputs give bit-identical outputs for a given precision mode.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

PRECISIONS = {"single": np.float32, "double": np.float64}


class Tensor:
    """A dense (n, c, h, w) array in single or double precision.

    Data is stored C-contiguous, i.e. flat row-major NCHW. In checked
    mode, non-finite scalars are rejected at construction.
    """

    __slots__ = ("data",)

    def __init__(self, data, precision: str | None = None, check: bool = False):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be 4-D NCHW, got shape {arr.shape}")
        if precision is not None:
            if precision not in PRECISIONS:
                raise ValueError(f"unknown precision {precision!r}")
            arr = arr.astype(PRECISIONS[precision], copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if check and not np.isfinite(arr).all():
            raise ValueError("tensor contains non-finite scalars")
        self.data = np.ascontiguousarray(arr)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def precision(self) -> str:
        return "single" if self.data.dtype == np.float32 else "double"

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def astype(self, precision: str) -> "Tensor":
        return Tensor(self.data, precision=precision)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, precision={self.precision})"


def _as4d(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# convolution

def conv2d_raw(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
               stride: int, pad: int) -> np.ndarray:
    """Cross-correlation of NCHW input with (cout, cin, k, k) weights."""
    n, cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    if cin_w != cin:
        raise ShapeError(f"conv input has {cin} channels, weight expects {cin_w}")
    if k != k2:
        raise ShapeError("conv kernel must be square")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv output would be empty for input {h}x{wd}, k={k}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, cin, k, k, ho, wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + ho * stride:stride,
                                    kj:kj + wo * stride:stride]
    cols = cols.reshape(n, cin * k * k, ho * wo)
    out = np.matmul(w.reshape(cout, -1), cols).reshape(n, cout, ho, wo)
    if b is not None:
        out += np.asarray(b, dtype=out.dtype).reshape(1, cout, 1, 1)
    return out


def conv2d_backward_raw(x: np.ndarray, w: np.ndarray, stride: int, pad: int,
                        gout: np.ndarray):
    """Gradients of conv2d: returns (dx, dw, db) for upstream grad ``gout``."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho, wo = gout.shape[2], gout.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, cin, k, k, ho, wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + ho * stride:stride,
                                    kj:kj + wo * stride:stride]
    cols = cols.reshape(n, cin * k * k, ho * wo)
    g2 = gout.reshape(n, cout, ho * wo)
    dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    db = gout.sum(axis=(0, 2, 3))
    dcols = np.matmul(w.reshape(cout, -1).T, g2).reshape(n, cin, k, k, ho, wo)
    dxp = np.zeros_like(xp)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + ho * stride:stride,
                kj:kj + wo * stride:stride] += dcols[:, :, ki, kj]
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


def conv2d(x: Tensor, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Batched 2-D cross-correlation with zero padding.

    ``weight`` is (cout, cin, k, k) with k in {1, 3} and stride in {1, 2}.
    """
    w = _as4d(weight)
    if w.ndim != 4:
        raise ShapeError("conv weight must be 4-D (cout, cin, k, k)")
    if w.shape[2] not in (1, 3):
        raise ShapeError(f"kernel size {w.shape[2]} not supported (use 1 or 3)")
    if stride not in (1, 2):
        raise ShapeError(f"stride {stride} not supported (use 1 or 2)")
    b = None if bias is None else np.asarray(bias).reshape(-1)
    if b is not None and b.shape[0] != w.shape[0]:
        raise ShapeError("bias length must equal cout")
    return Tensor(conv2d_raw(x.data, w.astype(x.data.dtype, copy=False), b, stride, pad))


# ---------------------------------------------------------------------------
# elementwise / structural ops

def leaky_relu_raw(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, x * x.dtype.type(slope))


def leaky_relu_backward_raw(x: np.ndarray, slope: float, gout: np.ndarray) -> np.ndarray:
    return np.where(x > 0, gout, gout * x.dtype.type(slope))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError("slope must lie in (0, 1)")
    return Tensor(leaky_relu_raw(x.data, slope))


def sigmoid_raw(x: np.ndarray) -> np.ndarray:
    # Split by sign for numerical stability at large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    return Tensor(sigmoid_raw(x.data))


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add shapes differ: {x.shape} vs {y.shape}")
    return Tensor(x.data + y.data)


def concat_channels(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat needs at least one input")
    arrs = [_as4d(p) for p in parts]
    ref = arrs[0].shape
    for a in arrs[1:]:
        if (a.shape[0], a.shape[2], a.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError("concat inputs must share n, h, w")
    return Tensor(np.concatenate(arrs, axis=1))


def pixel_shuffle_raw(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    co = c // (r * r)
    out = x.reshape(n, co, r, r, h, w)
    out = out.transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out.reshape(n, co, h * r, w * r))


def pixel_unshuffle_raw(x: np.ndarray, r: int) -> np.ndarray:
    """Inverse rearrangement: (n, c, h*r, w*r) -> (n, c*r*r, h, w)."""
    n, c, hr, wr = x.shape
    h, w = hr // r, wr // r
    out = x.reshape(n, c, h, r, w, r)
    out = out.transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(n, c * r * r, h, w))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange r*r channel groups into an r-times larger spatial map."""
    if x.shape[1] % (r * r) != 0:
        raise ShapeError(f"channels {x.shape[1]} not divisible by r^2={r * r}")
    return Tensor(pixel_shuffle_raw(x.data, r))


def channel_stats_raw(x: np.ndarray):
    """Per-sample, per-channel spatial mean and population std."""
    mean = x.mean(axis=(2, 3))
    var = ((x - mean[:, :, None, None]) ** 2).mean(axis=(2, 3))
    return mean, np.sqrt(var)


def channel_stats(x: Tensor):
    """Returns (mean, std), each shaped (n, c); std is the population form."""
    return channel_stats_raw(x.data)


def scale_channels(x: Tensor, factors) -> Tensor:
    """Multiply each channel by a factor; accepts (c,) or per-sample (n, c)."""
    f = np.asarray(factors, dtype=x.data.dtype)
    if f.ndim == 1:
        f = f.reshape(1, -1)
    if f.shape[1] != x.shape[1]:
        raise ShapeError("factor count must equal channel count")
    return Tensor(x.data * f[:, :, None, None])


# ---------------------------------------------------------------------------
# bicubic resize

def cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic interpolation kernel with parameter a."""
    at = np.abs(t)
    at2, at3 = at * at, at * at * at
    inner = (a + 2) * at3 - (a + 3) * at2 + 1
    outer = a * (at3 - 5 * at2 + 8 * at - 4)
    return np.where(at <= 1, inner, np.where(at < 2, outer, 0.0))


def _resize_weights(in_size: int, out_size: int, antialias: bool) -> np.ndarray:
    """Dense (out_size, in_size) row-stochastic bicubic weight matrix.

    Output pixel centers map to input coordinates with the MATLAB-style
    center alignment u = (x + 0.5)/scale - 0.5. When downscaling with
    antialias the kernel support widens by 1/scale. Source indices are
    clamped to the valid range and each row renormalized to sum to 1.
    """
    scale = out_size / in_size
    kscale = scale if (antialias and scale < 1.0) else 1.0
    support = 2.0 / kscale
    x = np.arange(out_size, dtype=np.float64)
    u = (x + 0.5) / scale - 0.5
    left = np.floor(u - support).astype(np.int64)
    width = int(np.ceil(2 * support)) + 2
    idx = left[:, None] + np.arange(width)[None, :]
    weights = cubic_kernel((u[:, None] - idx) * kscale) * kscale
    weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_size - 1)
    mat = np.zeros((out_size, in_size), dtype=np.float64)
    for j in range(width):
        np.add.at(mat, (x.astype(np.int64), idx[:, j]), weights[:, j])
    return mat


def bicubic_resize_raw(x: np.ndarray, out_h: int, out_w: int, antialias: bool) -> np.ndarray:
    wh = _resize_weights(x.shape[2], out_h, antialias).astype(x.dtype)
    ww = _resize_weights(x.shape[3], out_w, antialias).astype(x.dtype)
    out = np.einsum("oh,nchw->ncow", wh, x, optimize=True)
    return np.einsum("pw,ncow->ncop", ww, out, optimize=True)


def bicubic_resize(x: Tensor, out_h: int, out_w: int, antialias: bool = False) -> Tensor:
    """Separable bicubic resample (a = -0.5), MATLAB-style antialiasing."""
    if out_h < 1 or out_w < 1:
        raise ShapeError("output dimensions must be >= 1")
    return Tensor(bicubic_resize_raw(x.data, out_h, out_w, antialias))
