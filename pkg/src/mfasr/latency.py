"""Per-operator latency: canonical keys, host profiling, lookup-table
persistence, and whole-network prediction by summation.

A key encodes everything that determines an operator's cost, including
the input spatial size:

    conv|cin|cout|k|stride|pad|h|w
    lrelu|c|h|w        add|c|h|w         cca|c|hidden|h|w
    concat|c1+c2+...|h|w                 pixelshuffle|c|r|h|w

Prediction is an exact sum over the graph's layer keys and refuses to
guess: a missing key raises instead of interpolating.
"""

from __future__ import annotations

import hashlib
import json
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .costmodel import layer_flops
from .errors import ConfigError, FormatError, MissingEntry
from .graph import (CCA, Add, ConcatChannels, Conv, LeakyReLU, NetworkGraph,
                    PixelShuffle)
from .rng import Rng
from .tensor import conv2d_raw, leaky_relu_raw, pixel_shuffle_raw, sigmoid_raw

SCHEMA_VERSION = 1


def op_key(kind, in_shapes) -> str:
    """Canonical key for one operator applied to (c, h, w) inputs."""
    c, h, w = in_shapes[0]
    if isinstance(kind, Conv):
        return f"conv|{kind.cin}|{kind.cout}|{kind.k}|{kind.stride}|{kind.pad}|{h}|{w}"
    if isinstance(kind, LeakyReLU):
        return f"lrelu|{c}|{h}|{w}"
    if isinstance(kind, Add):
        return f"add|{c}|{h}|{w}"
    if isinstance(kind, PixelShuffle):
        return f"pixelshuffle|{c}|{kind.r}|{h}|{w}"
    if isinstance(kind, CCA):
        return f"cca|{kind.channels}|{kind.hidden}|{h}|{w}"
    if isinstance(kind, ConcatChannels):
        parts = "+".join(str(s[0]) for s in in_shapes)
        return f"concat|{parts}|{h}|{w}"
    raise TypeError(f"no key rule for layer kind {type(kind).__name__}")


def graph_keys(graph: NetworkGraph, input_hw: tuple[int, int]) -> list[str]:
    """One key per layer, in execution order (duplicates preserved)."""
    shapes = graph.infer_shapes(input_hw)
    return [op_key(l.kind, [shapes[s] for s in l.inputs]) for l in graph.layers]


@dataclass
class LatencyTable:
    device: str
    entries: dict[str, float] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def save(self, path) -> None:
        doc = {
            "schema_version": self.schema_version,
            "device": self.device,
            "entries": [{"key": k, "us": self.entries[k]}
                        for k in sorted(self.entries)],
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "LatencyTable":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise FormatError(f"unsupported latency table schema: "
                              f"{doc.get('schema_version')!r}")
        entries = {}
        for row in doc["entries"]:
            us = float(row["us"])
            if not (np.isfinite(us) and us >= 0):
                raise FormatError(f"latency for {row['key']!r} must be >= 0, got {us}")
            entries[row["key"]] = us
        return cls(doc["device"], entries)


def predict(graph: NetworkGraph, lut: LatencyTable,
            input_hw: tuple[int, int]) -> float:
    """Exact sum of per-layer table entries, in microseconds."""
    total = 0.0
    for key in graph_keys(graph, input_hw):
        if key not in lut.entries:
            raise MissingEntry(key)
        total += lut.entries[key]
    return total


# ---------------------------------------------------------------------------
# key collection

def _collect_keys(graphs_hw) -> dict[str, tuple]:
    """Map key -> (kind, in_shapes, out_shape) exemplar across graphs."""
    found: dict[str, tuple] = {}
    for graph, input_hw in graphs_hw:
        shapes = graph.infer_shapes(input_hw)
        for l in graph.layers:
            ins = [shapes[s] for s in l.inputs]
            key = op_key(l.kind, ins)
            if key not in found:
                found[key] = (l.kind, ins, shapes[l.id])
    return found


_FAMILY_KEY_CACHE: dict = {}


def family_keys(family, input_hw: tuple[int, int]) -> dict[str, tuple]:
    """Every operator key reachable from a genotype space (cached)."""
    cache_key = (family, tuple(input_hw))
    if cache_key not in _FAMILY_KEY_CACHE:
        pairs = ((family.build(g), input_hw) for g in family.genotypes())
        _FAMILY_KEY_CACHE[cache_key] = _collect_keys(pairs)
    return _FAMILY_KEY_CACHE[cache_key]


# ---------------------------------------------------------------------------
# profiling

def _run_op(kind, operands) -> np.ndarray:
    if isinstance(kind, Conv):
        x, w, b = operands
        return conv2d_raw(x, w, b, kind.stride, kind.pad)
    if isinstance(kind, LeakyReLU):
        return leaky_relu_raw(operands[0], kind.slope)
    if isinstance(kind, Add):
        return operands[0] + operands[1]
    if isinstance(kind, PixelShuffle):
        return pixel_shuffle_raw(operands[0], kind.r)
    if isinstance(kind, ConcatChannels):
        return np.concatenate(operands, axis=1)
    if isinstance(kind, CCA):
        x, wr, br, we, be = operands
        mean = x.mean(axis=(2, 3))
        std = np.sqrt(((x - mean[:, :, None, None]) ** 2).mean(axis=(2, 3)))
        s = mean + std
        a = sigmoid_raw(np.maximum(s @ wr.T + br, 0.0) @ we.T + be)
        return x * a[:, :, None, None]
    raise TypeError(f"cannot run layer kind {type(kind).__name__}")


def _make_operands(kind, in_shapes, rng: Rng):
    arrs = [rng.split(i).normal(0.0, 1.0, (1, *s), dtype=np.float32)
            for i, s in enumerate(in_shapes)]
    if isinstance(kind, Conv):
        wsrc = rng.split(100)
        w = wsrc.normal(0.0, 0.1, (kind.cout, kind.cin, kind.k, kind.k),
                        dtype=np.float32)
        b = wsrc.normal(0.0, 0.1, (kind.cout,), dtype=np.float32)
        return [arrs[0], w, b]
    if isinstance(kind, CCA):
        wsrc = rng.split(100)
        c, h = kind.channels, kind.hidden
        return [arrs[0],
                wsrc.normal(0.0, 0.1, (h, c), dtype=np.float32),
                np.zeros(h, dtype=np.float32),
                wsrc.normal(0.0, 0.1, (c, h), dtype=np.float32),
                np.zeros(c, dtype=np.float32)]
    return arrs


def _default_device() -> str:
    return f"{platform.machine()}/{platform.system().lower()}"


def profile(graphs_hw, reps: int = 11, warmup: int = 3, seed: int = 0,
            device: str | None = None) -> LatencyTable:
    """Measure every distinct operator across (graph, input_hw) pairs.

    Each operator runs alone on seeded random data; the entry is the
    median of ``reps`` timed runs after ``warmup`` discards, in
    microseconds, measured single-threaded.
    """
    if reps < 3:
        raise ConfigError(f"reps must be >= 3, got {reps}")
    keys = _collect_keys(graphs_hw)
    entries: dict[str, float] = {}
    base = Rng(seed)
    with threadpool_limits(limits=1):
        for i, key in enumerate(sorted(keys)):
            kind, in_shapes, _ = keys[key]
            operands = _make_operands(kind, in_shapes, base.split(i))
            for _ in range(warmup):
                _run_op(kind, operands)
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                _run_op(kind, operands)
                times.append((time.perf_counter() - t0) * 1e6)
            entries[key] = float(statistics.median(times))
    return LatencyTable(device or _default_device(), entries)


# ---------------------------------------------------------------------------
# synthetic tables

def _stable_unit(seed: int, key: str) -> float:
    digest = hashlib.blake2s(f"{seed}|{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


def synth_lut(family, input_hw: tuple[int, int], model: str = "flops_proportional",
              seed: int = 0, alpha: float = 1e-4) -> LatencyTable:
    """Deterministic table covering a whole genotype space.

    ``flops_proportional`` sets each entry to alpha * FLOPs(key);
    ``random_seeded`` draws a stable per-key value in [1, 100) us.
    """
    if model not in ("flops_proportional", "random_seeded"):
        raise ConfigError(f"unknown synthetic model {model!r}")
    keys = family_keys(family, input_hw)
    entries: dict[str, float] = {}
    for key, (kind, ins, out) in keys.items():
        if model == "flops_proportional":
            entries[key] = alpha * layer_flops(kind, ins, out)
        else:
            entries[key] = 1.0 + 99.0 * _stable_unit(seed, key)
    return LatencyTable(f"synthetic/{model}", entries)
