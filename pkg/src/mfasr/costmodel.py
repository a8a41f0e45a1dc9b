"""Analytic parameter, FLOP, and memory-access models, plus an
instrumented execution path that recounts the same quantities from the
activation shapes an actual forward produced.

Accounting rules (4 bytes per scalar throughout):
  conv    2*k^2*cin*cout*ho*wo multiply-adds plus cout*ho*wo bias adds
  elementwise (leaky-relu, add, channel scaling, sigmoid)  1 FLOP/element
  concat / sub-pixel shuffle  0 FLOPs (pure data movement)
  attention  summed from its constituents (stats, two projections, gate)
  memory  every layer moves (inputs + output + parameters) scalars
All counts are per input sample; the batch dimension is excluded.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import engine
from .graph import (CCA, INPUT_ID, Add, ConcatChannels, Conv, KIND_NAMES,
                    LeakyReLU, NetworkGraph, PixelShuffle)
from .weights import WeightStore


def _elems(shape) -> int:
    return int(np.prod(shape))


def layer_params(kind) -> int:
    if isinstance(kind, Conv):
        return kind.cout * kind.cin * kind.k * kind.k + kind.cout
    if isinstance(kind, CCA):
        h = kind.hidden
        return h * kind.channels + h + kind.channels * h + kind.channels
    return 0


def layer_flops(kind, in_shapes, out_shape) -> int:
    """FLOPs of one layer given per-sample (c, h, w) shapes."""
    if isinstance(kind, Conv):
        _, ho, wo = out_shape
        return (2 * kind.k * kind.k * kind.cin * kind.cout + kind.cout) * ho * wo
    if isinstance(kind, (LeakyReLU, Add)):
        return _elems(out_shape)
    if isinstance(kind, (ConcatChannels, PixelShuffle)):
        return 0
    if isinstance(kind, CCA):
        c, h, w = in_shapes[0]
        hid = kind.hidden
        hw = h * w
        stats = c * hw + c            # mean: add per element, divide per channel
        stats += 3 * c * hw + 2 * c   # std: subtract, square, accumulate; divide + root
        summary = c                   # mean + std
        reduce_fc = 2 * c * hid + hid
        relu = hid
        expand_fc = 2 * hid * c + c
        gate = c                      # sigmoid, one per channel
        scale = c * hw                # per-element multiply
        return stats + summary + reduce_fc + relu + expand_fc + gate + scale
    raise TypeError(f"no FLOP rule for layer kind {type(kind).__name__}")


def layer_mac_bytes(kind, in_shapes, out_shape) -> int:
    moved = sum(_elems(s) for s in in_shapes) + _elems(out_shape) + layer_params(kind)
    return 4 * moved


@dataclass(frozen=True)
class LayerCost:
    layer_id: str
    kind: str
    params: int
    flops: int
    mac_bytes: int


@dataclass
class CostReport:
    input_hw: tuple[int, int]
    per_layer: list[LayerCost]

    @property
    def params(self) -> int:
        return sum(e.params for e in self.per_layer)

    @property
    def flops(self) -> int:
        return sum(e.flops for e in self.per_layer)

    @property
    def mac_bytes(self) -> int:
        return sum(e.mac_bytes for e in self.per_layer)

    def to_dict(self) -> dict:
        return {
            "input_hw": list(self.input_hw),
            "totals": {"params": self.params, "flops": self.flops,
                       "mac_bytes": self.mac_bytes},
            "per_layer": [asdict(e) for e in self.per_layer],
        }


def cost_report(graph: NetworkGraph, input_hw: tuple[int, int]) -> CostReport:
    shapes = graph.infer_shapes(input_hw)
    rows = []
    for l in graph.layers:
        ins = [shapes[s] for s in l.inputs]
        out = shapes[l.id]
        rows.append(LayerCost(l.id, KIND_NAMES[type(l.kind)], layer_params(l.kind),
                              layer_flops(l.kind, ins, out),
                              layer_mac_bytes(l.kind, ins, out)))
    return CostReport(tuple(input_hw), rows)


def count_params(graph: NetworkGraph) -> int:
    return sum(layer_params(l.kind) for l in graph.layers)


def count_flops(graph: NetworkGraph, input_hw: tuple[int, int]) -> int:
    return cost_report(graph, input_hw).flops


def memory_access_cost(graph: NetworkGraph, input_hw: tuple[int, int]) -> int:
    return cost_report(graph, input_hw).mac_bytes


def instrumented_forward(graph: NetworkGraph, store: WeightStore, x: np.ndarray):
    """Forward pass that recounts FLOPs and moved bytes from the shapes
    the execution actually produced. Returns (output, flops, bytes)."""
    fwd = engine.forward(graph, store, x)
    flops = 0
    mac = 0
    for l in graph.layers:
        ins = [fwd.values[s].shape[1:] for s in l.inputs]
        out = fwd.values[l.id].shape[1:]
        flops += layer_flops(l.kind, ins, out)
        mac += layer_mac_bytes(l.kind, ins, out)
    return fwd.output, flops, mac
