"""Layer-graph IR and the builders for the generator family, the patch
discriminator, and the frozen feature extractor used by the perceptual loss.

A :class:`NetworkGraph` is an ordered list of :class:`LayerSpec` nodes in
topological order. The reserved id ``"input"`` denotes the graph input.
Construction is pure: the same arguments always produce the same ids in
the same order, which is what lets sub-network weights line up with the
shared store across the whole genotype space.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace

from .errors import GenotypeError, ShapeError

INPUT_ID = "input"

# Canonical channel-width choices for the searched generator.
CHANNEL_CHOICES = (48, 32, 24)
GENE_COUNT = 8

GEN_TAPS = ("g1", "g2", "g3")
DISC_TAPS = ("d2", "d4", "d6")


# ---------------------------------------------------------------------------
# layer kinds

@dataclass(frozen=True)
class Conv:
    cin: int
    cout: int
    k: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class LeakyReLU:
    slope: float = 0.2


@dataclass(frozen=True)
class PixelShuffle:
    r: int


@dataclass(frozen=True)
class ConcatChannels:
    pass


@dataclass(frozen=True)
class Add:
    pass


@dataclass(frozen=True)
class CCA:
    """Contrast-aware channel attention over ``channels`` inputs."""
    channels: int
    reduction: int = 4

    @property
    def hidden(self) -> int:
        return max(self.channels // self.reduction, self.reduction)


KIND_NAMES = {Conv: "conv", LeakyReLU: "leaky_relu", PixelShuffle: "pixel_shuffle",
              ConcatChannels: "concat", Add: "add", CCA: "cca"}
_NAME_KINDS = {v: k for k, v in KIND_NAMES.items()}


@dataclass(frozen=True)
class LayerSpec:
    """One node: a kind, its input ids, an optional tap label.

    ``init_scale`` shrinks the random init of this layer's weights; the
    builders set 0.1 on convolutions inside aggregation-block residual
    paths so deep stacks start close to identity.
    """
    id: str
    kind: object
    inputs: tuple[str, ...]
    tap: str | None = None
    init_scale: float = 1.0


@dataclass(frozen=True)
class Genotype:
    """Eight channel-width genes describing one sub-generator."""
    genes: tuple[int, ...]

    def __post_init__(self):
        genes = tuple(int(g) for g in self.genes)
        if len(genes) != GENE_COUNT:
            raise GenotypeError(f"genotype needs {GENE_COUNT} genes, got {len(genes)}")
        if any(g < 1 for g in genes):
            raise GenotypeError("genes must be positive channel counts")
        object.__setattr__(self, "genes", genes)

    @classmethod
    def uniform(cls, width: int) -> "Genotype":
        return cls((width,) * GENE_COUNT)

    def validate_choices(self, choices=CHANNEL_CHOICES) -> None:
        bad = [g for g in self.genes if g not in choices]
        if bad:
            raise GenotypeError(f"genes {bad} outside choice set {tuple(choices)}")

    def dominates_or_equal(self, other: "Genotype") -> bool:
        return all(a >= b for a, b in zip(self.genes, other.genes))

    def __iter__(self):
        return iter(self.genes)


def all_genotypes(choices=CHANNEL_CHOICES):
    """Every genotype in the space, in lexicographic gene-value order."""
    for genes in itertools.product(sorted(choices), repeat=GENE_COUNT):
        yield Genotype(genes)


# ---------------------------------------------------------------------------
# graph container

@dataclass
class NetworkGraph:
    layers: list[LayerSpec]
    input_channels: int
    output_id: str
    _by_id: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._by_id = {l.id: l for l in self.layers}

    def layer(self, layer_id: str) -> LayerSpec:
        return self._by_id[layer_id]

    @property
    def taps(self) -> dict[str, str]:
        """Map tap label -> layer id."""
        return {l.tap: l.id for l in self.layers if l.tap is not None}

    def consumers(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for l in self.layers:
            for src in l.inputs:
                out.setdefault(src, []).append(l.id)
        return out

    # -- shape propagation ---------------------------------------------------

    def infer_channels(self) -> dict[str, int]:
        """Channel count of every node, keyed by id (includes ``input``)."""
        ch = {INPUT_ID: self.input_channels}
        for l in self.layers:
            k = l.kind
            if isinstance(k, Conv):
                ch[l.id] = k.cout
            elif isinstance(k, PixelShuffle):
                ch[l.id] = ch[l.inputs[0]] // (k.r * k.r)
            elif isinstance(k, ConcatChannels):
                ch[l.id] = sum(ch[i] for i in l.inputs)
            else:
                ch[l.id] = ch[l.inputs[0]]
        return ch

    def infer_shapes(self, input_hw: tuple[int, int]):
        """(c, h, w) of every node for a given input size; batch is implicit."""
        shapes = {INPUT_ID: (self.input_channels, input_hw[0], input_hw[1])}
        for l in self.layers:
            k = l.kind
            c, h, w = shapes[l.inputs[0]]
            if isinstance(k, Conv):
                ho = (h + 2 * k.pad - k.k) // k.stride + 1
                wo = (w + 2 * k.pad - k.k) // k.stride + 1
                shapes[l.id] = (k.cout, ho, wo)
            elif isinstance(k, PixelShuffle):
                shapes[l.id] = (c // (k.r * k.r), h * k.r, w * k.r)
            elif isinstance(k, ConcatChannels):
                shapes[l.id] = (sum(shapes[i][0] for i in l.inputs), h, w)
            else:
                shapes[l.id] = (c, h, w)
        return shapes

    # -- serialization --------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "input_channels": self.input_channels,
            "output_id": self.output_id,
            "layers": [
                {
                    "id": l.id,
                    "kind": KIND_NAMES[type(l.kind)],
                    "params": {k: v for k, v in vars(l.kind).items()},
                    "inputs": list(l.inputs),
                    "tap": l.tap,
                    "init_scale": l.init_scale,
                }
                for l in self.layers
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NetworkGraph":
        doc = json.loads(text)
        layers = [
            LayerSpec(
                id=entry["id"],
                kind=_NAME_KINDS[entry["kind"]](**entry["params"]),
                inputs=tuple(entry["inputs"]),
                tap=entry.get("tap"),
                init_scale=entry.get("init_scale", 1.0),
            )
            for entry in doc["layers"]
        ]
        return cls(layers, doc["input_channels"], doc["output_id"])


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Diagnostic:
    code: str
    layer_id: str
    message: str


def validate(graph: NetworkGraph) -> list[Diagnostic]:
    """Check topology, channel compatibility, and tap completeness.

    Returns an empty list when the graph is well-formed; never raises.
    """
    errors: list[Diagnostic] = []
    seen = {INPUT_ID}
    ch: dict[str, int] = {INPUT_ID: graph.input_channels}
    for l in graph.layers:
        if l.id in seen:
            errors.append(Diagnostic("DuplicateId", l.id, f"id {l.id!r} repeated"))
        for src in l.inputs:
            if src not in seen:
                errors.append(Diagnostic(
                    "UnknownLayer", l.id,
                    f"{l.id!r} references {src!r} which is not an earlier layer"))
        seen.add(l.id)
        ins = [ch.get(src) for src in l.inputs]
        if any(c is None for c in ins):
            ch[l.id] = 0
            continue
        k = l.kind
        if isinstance(k, Conv):
            if len(ins) != 1:
                errors.append(Diagnostic("Arity", l.id, "conv takes one input"))
            elif ins[0] != k.cin:
                errors.append(Diagnostic(
                    "ChannelMismatch", l.id,
                    f"conv expects {k.cin} input channels, got {ins[0]}"))
            ch[l.id] = k.cout
        elif isinstance(k, Add):
            if len(set(ins)) != 1 or len(ins) < 2:
                errors.append(Diagnostic(
                    "ChannelMismatch", l.id,
                    f"add inputs must agree in channels, got {ins}"))
            ch[l.id] = ins[0]
        elif isinstance(k, ConcatChannels):
            ch[l.id] = sum(ins)
        elif isinstance(k, PixelShuffle):
            if ins[0] % (k.r * k.r) != 0:
                errors.append(Diagnostic(
                    "ChannelMismatch", l.id,
                    f"{ins[0]} channels not divisible by r^2={k.r * k.r}"))
            ch[l.id] = ins[0] // (k.r * k.r)
        elif isinstance(k, CCA):
            if ins[0] != k.channels:
                errors.append(Diagnostic(
                    "ChannelMismatch", l.id,
                    f"cca expects {k.channels} channels, got {ins[0]}"))
            ch[l.id] = ins[0]
        else:
            ch[l.id] = ins[0]
    if graph.output_id not in seen:
        errors.append(Diagnostic("UnknownLayer", graph.output_id, "output id not defined"))

    labels = {l.tap for l in graph.layers if l.tap is not None}
    if labels:
        for family in (set(GEN_TAPS), set(DISC_TAPS)):
            if labels & family and labels != family:
                errors.append(Diagnostic(
                    "TapSet", graph.output_id,
                    f"tap labels {sorted(labels)} must be exactly {sorted(family)}"))
                break
    return errors


# ---------------------------------------------------------------------------
# builders

class GraphBuilder:
    """Accumulates layers; every emit keeps topological order by construction."""

    def __init__(self, input_channels: int):
        self.input_channels = input_channels
        self.layers: list[LayerSpec] = []

    def emit(self, layer_id, kind, inputs, tap=None, init_scale=1.0) -> str:
        self.layers.append(LayerSpec(layer_id, kind, tuple(inputs), tap, init_scale))
        return layer_id

    def finish(self, output_id: str) -> NetworkGraph:
        return NetworkGraph(self.layers, self.input_channels, output_id)


def build_cfab(b: GraphBuilder, input_id: str, cin: int, width: int,
               prefix: str, residual_scale: float = 0.1) -> str:
    """Aggregation block: five 3x3 convs whose outputs are concatenated,
    gated by channel attention, projected back to ``width``, with a local
    skip from the first conv's activation."""
    conv_outs = []
    cur, cur_c = input_id, cin
    for i in range(1, 6):
        c = b.emit(f"{prefix}.conv{i}", Conv(cur_c, width, 3, 1, 1), [cur],
                   init_scale=residual_scale)
        cur = b.emit(f"{prefix}.lrelu{i}", LeakyReLU(), [c])
        cur_c = width
        conv_outs.append(cur)
    cat = b.emit(f"{prefix}.cat", ConcatChannels(), conv_outs)
    cca = b.emit(f"{prefix}.cca", CCA(5 * width), [cat], init_scale=residual_scale)
    proj = b.emit(f"{prefix}.proj", Conv(5 * width, width, 1), [cca],
                  init_scale=residual_scale)
    return b.emit(f"{prefix}.add", Add(), [proj, conv_outs[0]])


def build_mfanet(genotype: Genotype, scale: int = 4,
                 cfabs_per_mfam: int = 2) -> NetworkGraph:
    """Generator: coarse 3x3 conv, three aggregation modules with taps
    g1..g3, global fusion with a long skip, smoothing conv, and a
    reconstruction conv feeding a sub-pixel upscale.

    Gene layout: [coarse width, module-1 internal, module-1 output,
    module-2 internal, module-2 output, module-3 internal, module-3
    output, smoothing width].
    """
    if not isinstance(genotype, Genotype):
        genotype = Genotype(tuple(genotype))
    if scale not in (2, 4):
        raise GenotypeError(f"scale must be 2 or 4, got {scale}")
    if cfabs_per_mfam < 1:
        raise GenotypeError("cfabs_per_mfam must be >= 1")
    g = genotype.genes
    g0, g7 = g[0], g[7]

    b = GraphBuilder(3)
    head = b.emit("head.conv", Conv(3, g0, 3, 1, 1), [INPUT_ID])
    head = b.emit("head.lrelu", LeakyReLU(), [head])

    module_outs = []
    cur, cur_c = head, g0
    for i in (1, 2, 3):
        internal, out_w = g[2 * i - 1], g[2 * i]
        mod_in, mod_in_c = cur, cur_c
        block_outs = []
        for j in range(1, cfabs_per_mfam + 1):
            cur = build_cfab(b, cur, cur_c, internal, prefix=f"m{i}.b{j}")
            cur_c = internal
            block_outs.append(cur)
        cat = b.emit(f"m{i}.cat", ConcatChannels(), [mod_in] + block_outs)
        agg = b.emit(f"m{i}.agg", Conv(mod_in_c + cfabs_per_mfam * internal, out_w, 1),
                     [cat], init_scale=0.1)
        # 1x1 adapter keeps the module skip well-formed for any width pair.
        skip = b.emit(f"m{i}.skip", Conv(mod_in_c, out_w, 1), [mod_in])
        cur = b.emit(f"m{i}.add", Add(), [agg, skip], tap=f"g{i}")
        cur_c = out_w
        module_outs.append(cur)

    cat = b.emit("fuse.cat", ConcatChannels(), module_outs)
    fuse = b.emit("fuse.conv", Conv(g[2] + g[4] + g[6], g0, 1), [cat])
    fused = b.emit("fuse.add", Add(), [fuse, head])
    sm = b.emit("smooth.conv", Conv(g0, g7, 3, 1, 1), [fused])
    sm = b.emit("smooth.lrelu", LeakyReLU(), [sm])
    rec = b.emit("recon.conv", Conv(g7, 3 * scale * scale, 3, 1, 1), [sm])
    out = b.emit("up.shuffle", PixelShuffle(scale), [rec])
    return b.finish(out)


def build_patchgan(base: int = 64) -> NetworkGraph:
    """Seven-conv patch discriminator, no normalization layers.

    Strides 1,2,1,2,1,2,1 shrink the map by 8; the last conv emits a
    one-channel logit grid. Taps d2, d4, d6 sit after convs 2, 4 and 6.
    """
    if base < 1:
        raise ShapeError("discriminator base width must be >= 1")
    plan = [
        (3, base, 1), (base, base, 2),
        (base, 2 * base, 1), (2 * base, 2 * base, 2),
        (2 * base, 4 * base, 1), (4 * base, 4 * base, 2),
        (4 * base, 1, 1),
    ]
    b = GraphBuilder(3)
    cur = INPUT_ID
    for i, (cin, cout, stride) in enumerate(plan, start=1):
        cur = b.emit(f"d{i}.conv", Conv(cin, cout, 3, stride, 1), [cur])
        if i < len(plan):
            tap = f"d{i}" if i in (2, 4, 6) else None
            cur = b.emit(f"d{i}.lrelu", LeakyReLU(), [cur], tap=tap)
    return b.finish(cur)


def build_percep_extractor_graph() -> NetworkGraph:
    """Fixed five-conv feature stack used as the frozen perceptual embedding."""
    plan = [(3, 16, 1), (16, 32, 2), (32, 32, 1), (32, 64, 2), (64, 64, 1)]
    b = GraphBuilder(3)
    cur = INPUT_ID
    for i, (cin, cout, stride) in enumerate(plan, start=1):
        cur = b.emit(f"p{i}.conv", Conv(cin, cout, 3, stride, 1), [cur])
        cur = b.emit(f"p{i}.lrelu", LeakyReLU(), [cur])
    return b.finish(cur)


@dataclass(frozen=True)
class ModelFamily:
    """The searched generator family: choice set plus structural knobs."""
    choices: tuple[int, ...] = CHANNEL_CHOICES
    scale: int = 4
    cfabs_per_mfam: int = 2

    def build(self, genotype: Genotype) -> NetworkGraph:
        return build_mfanet(genotype, self.scale, self.cfabs_per_mfam)

    def max_genotype(self) -> Genotype:
        return Genotype.uniform(max(self.choices))

    def min_genotype(self) -> Genotype:
        return Genotype.uniform(min(self.choices))

    def genotypes(self):
        return all_genotypes(self.choices)

    def space_size(self) -> int:
        return len(self.choices) ** GENE_COUNT

    def with_choices(self, choices) -> "ModelFamily":
        return replace(self, choices=tuple(choices))
