"""Graph executor: forward evaluation with tap capture, and reverse-mode
gradients for every layer kind.

``forward`` walks the layer list once (builders emit topological order)
and records every intermediate activation, so ``backward`` can replay the
graph in reverse. Gradients may be injected both at the graph output and
at named taps, which is how the feature-matching losses reach into the
middle of a network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PipelineError, ShapeError, TapError
from .graph import (CCA, INPUT_ID, Add, ConcatChannels, Conv, LeakyReLU,
                    NetworkGraph, PixelShuffle)
from .tensor import (channel_stats_raw, conv2d_backward_raw, conv2d_raw,
                     leaky_relu_backward_raw, leaky_relu_raw,
                     pixel_shuffle_raw, pixel_unshuffle_raw, sigmoid_raw)
from .weights import WeightStore


@dataclass
class ForwardResult:
    output: np.ndarray
    taps: dict[str, np.ndarray]
    values: dict[str, np.ndarray] = field(default_factory=dict)
    extras: dict[str, dict] = field(default_factory=dict)


def _param(store: WeightStore, name: str) -> np.ndarray:
    try:
        return store[name]
    except KeyError:
        raise PipelineError(f"weight store is missing parameter {name!r}") from None


def forward(graph: NetworkGraph, store: WeightStore, x: np.ndarray) -> ForwardResult:
    """Evaluate the graph on a NCHW batch, capturing all tap activations."""
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != graph.input_channels:
        raise ShapeError(
            f"input shape {x.shape} does not match {graph.input_channels}-channel graph")
    values: dict[str, np.ndarray] = {INPUT_ID: x}
    extras: dict[str, dict] = {}
    taps: dict[str, np.ndarray] = {}
    for l in graph.layers:
        k = l.kind
        for src in l.inputs:
            if src not in values:
                raise PipelineError(f"layer {l.id!r} consumes {src!r} before it exists")
        if isinstance(k, Conv):
            out = conv2d_raw(values[l.inputs[0]], _param(store, f"{l.id}.weight"),
                             _param(store, f"{l.id}.bias"), k.stride, k.pad)
        elif isinstance(k, LeakyReLU):
            out = leaky_relu_raw(values[l.inputs[0]], k.slope)
        elif isinstance(k, Add):
            out = values[l.inputs[0]] + values[l.inputs[1]]
        elif isinstance(k, ConcatChannels):
            out = np.concatenate([values[s] for s in l.inputs], axis=1)
        elif isinstance(k, PixelShuffle):
            out = pixel_shuffle_raw(values[l.inputs[0]], k.r)
        elif isinstance(k, CCA):
            out = _cca_forward(l.id, values[l.inputs[0]], store, extras)
        else:
            raise PipelineError(f"no forward rule for layer kind {type(k).__name__}")
        values[l.id] = out
        if l.tap is not None:
            taps[l.tap] = out
    return ForwardResult(values[graph.output_id], taps, values, extras)


def predict(graph: NetworkGraph, store: WeightStore, x: np.ndarray) -> np.ndarray:
    return forward(graph, store, x).output


def _cca_forward(lid: str, x: np.ndarray, store: WeightStore,
                 extras: dict) -> np.ndarray:
    wr, br = _param(store, f"{lid}.reduce.weight"), _param(store, f"{lid}.reduce.bias")
    we, be = _param(store, f"{lid}.expand.weight"), _param(store, f"{lid}.expand.bias")
    mean, std = channel_stats_raw(x)
    s = mean + std
    z1 = s @ wr.T + br
    r1 = np.maximum(z1, 0.0)
    z2 = r1 @ we.T + be
    a = sigmoid_raw(z2)
    extras[lid] = {"mean": mean, "std": std, "s": s, "z1": z1, "r1": r1, "a": a}
    return x * a[:, :, None, None]


def _cca_backward(l, store: WeightStore, fwd: ForwardResult, g: np.ndarray):
    x = fwd.values[l.inputs[0]]
    e = fwd.extras[l.id]
    a, r1, z1, s = e["a"], e["r1"], e["z1"], e["s"]
    wr = store[f"{l.id}.reduce.weight"]
    we = store[f"{l.id}.expand.weight"]
    n, c, h, w = x.shape
    hw = h * w

    da = np.einsum("nchw,nchw->nc", g, x)
    dx = g * a[:, :, None, None]
    dz2 = da * a * (1.0 - a)
    dwe = dz2.T @ r1
    dbe = dz2.sum(axis=0)
    dz1 = (dz2 @ we) * (z1 > 0)
    dwr = dz1.T @ s
    dbr = dz1.sum(axis=0)
    ds = dz1 @ wr

    # summary = mean + population std; the std term is zero for constant maps
    mean, std = e["mean"], e["std"]
    centered = x - mean[:, :, None, None]
    safe = np.where(std > 0, std, 1.0)[:, :, None, None]
    dstd = np.where(std[:, :, None, None] > 0, centered / (hw * safe), 0.0)
    dx = dx + ds[:, :, None, None] * (1.0 / hw + dstd)

    pg = {f"{l.id}.reduce.weight": dwr, f"{l.id}.reduce.bias": dbr,
          f"{l.id}.expand.weight": dwe, f"{l.id}.expand.bias": dbe}
    return dx, pg


def _acc(d: dict, key: str, val: np.ndarray) -> None:
    if key in d:
        d[key] = d[key] + val
    else:
        d[key] = val


def backward(graph: NetworkGraph, store: WeightStore, fwd: ForwardResult,
             grad_output: np.ndarray | None,
             tap_grads: dict[str, np.ndarray] | None = None):
    """Reverse pass. Returns (grad wrt graph input, dict of parameter grads).

    ``grad_output`` seeds the gradient at the output node (None for zero);
    ``tap_grads`` maps tap labels to extra gradients injected at the
    tapped activations.
    """
    grads: dict[str, np.ndarray] = {}
    pgrads: dict[str, np.ndarray] = {}
    if grad_output is not None:
        _acc(grads, graph.output_id, np.asarray(grad_output))
    if tap_grads:
        tap_ids = graph.taps
        for label, g in tap_grads.items():
            if label not in tap_ids:
                raise TapError(f"graph has no tap {label!r}")
            _acc(grads, tap_ids[label], np.asarray(g))
    for l in reversed(graph.layers):
        g = grads.pop(l.id, None)
        if g is None:
            continue
        k = l.kind
        if isinstance(k, Conv):
            x = fwd.values[l.inputs[0]]
            dx, dw, db = conv2d_backward_raw(x, store[f"{l.id}.weight"],
                                             k.stride, k.pad, g)
            _acc(grads, l.inputs[0], dx)
            _acc(pgrads, f"{l.id}.weight", dw)
            _acc(pgrads, f"{l.id}.bias", db)
        elif isinstance(k, LeakyReLU):
            x = fwd.values[l.inputs[0]]
            _acc(grads, l.inputs[0], leaky_relu_backward_raw(x, k.slope, g))
        elif isinstance(k, Add):
            for src in l.inputs:
                _acc(grads, src, g)
        elif isinstance(k, ConcatChannels):
            off = 0
            for src in l.inputs:
                c = fwd.values[src].shape[1]
                _acc(grads, src, g[:, off:off + c])
                off += c
        elif isinstance(k, PixelShuffle):
            _acc(grads, l.inputs[0], pixel_unshuffle_raw(g, k.r))
        elif isinstance(k, CCA):
            dx, pg = _cca_backward(l, store, fwd, g)
            _acc(grads, l.inputs[0], dx)
            for name, arr in pg.items():
                _acc(pgrads, name, arr)
        else:
            raise PipelineError(f"no backward rule for layer kind {type(k).__name__}")
    gin = grads.pop(INPUT_ID, None)
    if gin is None:
        gin = np.zeros_like(fwd.values[INPUT_ID])
    return gin, pgrads
