"""Named weight storage: initialization, prefix slicing for sub-networks,
importance reordering, and the binary on-disk format.

Store keys are flat parameter names derived from layer ids:
``<id>.weight`` / ``<id>.bias`` for convolutions and
``<id>.reduce.*`` / ``<id>.expand.*`` for the two projections inside a
channel-attention layer. Prefix slicing cuts every parameter to the
leading block the narrower graph expects, which is what makes every
sub-generator share the front portion of the full-width weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ShapeError, SliceError
from .graph import CCA, Conv, Genotype, LeakyReLU, NetworkGraph
from .rng import Rng

MAGIC = b"MFAW"
FORMAT_VERSION = 1
_GENOTYPE_KEY = "__genotype__"


@dataclass
class WeightStore:
    """Ordered map of parameter name -> numpy array, tagged with the
    genotype of the graph the shapes fit (None for non-searched nets)."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    genotype: Genotype | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self):
        return list(self.arrays)

    def copy(self) -> "WeightStore":
        return WeightStore({k: v.copy() for k, v in self.arrays.items()}, self.genotype)

    def astype(self, dtype) -> "WeightStore":
        return WeightStore({k: v.astype(dtype) for k, v in self.arrays.items()},
                           self.genotype)

    def scalar_count(self) -> int:
        return sum(int(v.size) for v in self.arrays.values())

    def allclose(self, other: "WeightStore", **kw) -> bool:
        return self.names() == other.names() and all(
            np.allclose(self.arrays[k], other.arrays[k], **kw) for k in self.arrays)

    def equal(self, other: "WeightStore") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)


def param_shapes(graph: NetworkGraph) -> dict[str, tuple[int, ...]]:
    """Expected parameter shapes for every conv / attention layer."""
    shapes: dict[str, tuple[int, ...]] = {}
    for l in graph.layers:
        k = l.kind
        if isinstance(k, Conv):
            shapes[f"{l.id}.weight"] = (k.cout, k.cin, k.k, k.k)
            shapes[f"{l.id}.bias"] = (k.cout,)
        elif isinstance(k, CCA):
            shapes[f"{l.id}.reduce.weight"] = (k.hidden, k.channels)
            shapes[f"{l.id}.reduce.bias"] = (k.hidden,)
            shapes[f"{l.id}.expand.weight"] = (k.channels, k.hidden)
            shapes[f"{l.id}.expand.bias"] = (k.channels,)
    return shapes


def init_weights(graph: NetworkGraph, seed: int,
                 genotype: Genotype | None = None,
                 dtype=np.float32) -> WeightStore:
    """Kaiming fan-in normal init, biases zero, deterministic per seed.

    Convolutions flagged with ``init_scale`` (the residual-path convs)
    have their draw multiplied by that factor.
    """
    rng = Rng(seed)
    arrays: dict[str, np.ndarray] = {}
    stream = 0
    for l in graph.layers:
        k = l.kind
        if isinstance(k, Conv):
            fan_in = k.cin * k.k * k.k
            std = l.init_scale * np.sqrt(2.0 / fan_in)
            arrays[f"{l.id}.weight"] = rng.split(stream).normal(
                0.0, std, (k.cout, k.cin, k.k, k.k), dtype=dtype)
            arrays[f"{l.id}.bias"] = np.zeros(k.cout, dtype=dtype)
            stream += 1
        elif isinstance(k, CCA):
            for part, (rows, cols) in (("reduce", (k.hidden, k.channels)),
                                       ("expand", (k.channels, k.hidden))):
                std = l.init_scale * np.sqrt(2.0 / cols)
                arrays[f"{l.id}.{part}.weight"] = rng.split(stream).normal(
                    0.0, std, (rows, cols), dtype=dtype)
                arrays[f"{l.id}.{part}.bias"] = np.zeros(rows, dtype=dtype)
                stream += 1
    return WeightStore(arrays, genotype)


def check_fit(store: WeightStore, graph: NetworkGraph) -> None:
    """Raise ShapeError unless the store exactly fits the graph."""
    expected = param_shapes(graph)
    for name, shape in expected.items():
        if name not in store:
            raise ShapeError(f"store missing parameter {name!r}")
        if tuple(store[name].shape) != shape:
            raise ShapeError(
                f"parameter {name!r} has shape {store[name].shape}, expected {shape}")


def slice_for_genotype(store: WeightStore, super_genotype: Genotype,
                       sub_genotype: Genotype, graph_builder) -> WeightStore:
    """Restrict a shared full-width store to a narrower genotype.

    Every parameter is cut to the leading block along each axis so the
    result fits ``graph_builder(sub_genotype)``. The identity slice
    returns arrays bit-identical to the source.
    """
    if not super_genotype.dominates_or_equal(sub_genotype):
        over = [i for i, (a, b) in enumerate(zip(sub_genotype, super_genotype)) if a > b]
        raise SliceError(f"sub genes at positions {over} exceed the shared store")
    sub_graph = graph_builder(sub_genotype)
    targets = param_shapes(sub_graph)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in targets.items():
        if name not in store:
            raise SliceError(f"shared store has no parameter {name!r}")
        src = store[name]
        if len(shape) != src.ndim or any(t > s for t, s in zip(shape, src.shape)):
            raise SliceError(
                f"parameter {name!r}: target {shape} is not a prefix of {src.shape}")
        arrays[name] = src[tuple(slice(0, t) for t in shape)].copy()
    return WeightStore(arrays, sub_genotype)


# ---------------------------------------------------------------------------
# importance reordering

def _safe_positions(graph: NetworkGraph) -> list[tuple[str, str]]:
    """(producer conv id, consumer conv id) pairs where permuting the
    producer's output channels is provably function-preserving: the
    producer feeds exactly one consumer conv, optionally through a single
    untapped leaky-relu, with no concat/add/tap in between."""
    consumers = graph.consumers()
    pairs = []
    for l in graph.layers:
        if not isinstance(l.kind, Conv) or l.tap is not None:
            continue
        nxt = consumers.get(l.id, [])
        if len(nxt) != 1 or l.id == graph.output_id:
            continue
        mid = graph.layer(nxt[0])
        if isinstance(mid.kind, LeakyReLU) and mid.tap is None and mid.id != graph.output_id:
            after = consumers.get(mid.id, [])
            if len(after) != 1:
                continue
            mid = graph.layer(after[0])
        if isinstance(mid.kind, Conv):
            pairs.append((l.id, mid.id))
    return pairs


def reorder_by_importance(store: WeightStore, graph: NetworkGraph) -> WeightStore:
    """Sort output channels by descending L1 norm at every safe position,
    permuting the consumer's input channels to match."""
    out = store.copy()
    for producer, consumer in _safe_positions(graph):
        w = out.arrays[f"{producer}.weight"]
        norms = np.abs(w).reshape(w.shape[0], -1).sum(axis=1)
        perm = np.argsort(-norms, kind="stable")
        out.arrays[f"{producer}.weight"] = w[perm]
        out.arrays[f"{producer}.bias"] = out.arrays[f"{producer}.bias"][perm]
        cw = out.arrays[f"{consumer}.weight"]
        out.arrays[f"{consumer}.weight"] = cw[:, perm]
    return out


# ---------------------------------------------------------------------------
# binary persistence
#
# Layout: magic "MFAW", u32 version, u32 entry count; each entry is a
# u16 name length, the UTF-8 name, a u8 rank, u32 dims, then the scalars
# as little-endian IEEE-754 float32. The genotype tag rides along as a
# reserved entry so a load round-trips the tag.

def save(store: WeightStore, path) -> None:
    entries = dict(store.arrays)
    if store.genotype is not None:
        entries[_GENOTYPE_KEY] = np.asarray(store.genotype.genes, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(entries)))
        for name, arr in entries.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            arr32 = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<B", arr32.ndim))
            f.write(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
            f.write(arr32.tobytes())


def load(path) -> WeightStore:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported version {version}")
        off = 12
        arrays: dict[str, np.ndarray] = {}
        genotype = None
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            end = off + 4 * size
            if end > len(data):
                raise FormatError("truncated payload")
            arr = np.frombuffer(data[off:end], dtype="<f4").reshape(dims).copy()
            off = end
            if name == _GENOTYPE_KEY:
                genotype = Genotype(tuple(int(g) for g in arr))
            else:
                arrays[name] = arr
        if off != len(data):
            raise FormatError(f"{len(data) - off} trailing bytes after last entry")
    except struct.error as exc:
        raise FormatError(f"truncated weight file: {exc}") from exc
    return WeightStore(arrays, genotype)
