"""The five training objectives and their gradients.

Scalar-valued losses come in pairs: ``loss_x(...)`` returns the value,
``loss_x_grad(...)`` additionally returns gradients with respect to the
trainable inputs. Feature-matching distillation compares tapped
activations through per-tap 1x1 projections when teacher and student
widths differ; the projections are trainable and are discarded after the
distillation stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .errors import ConfigError, TapError
from .graph import DISC_TAPS, GEN_TAPS, NetworkGraph, build_percep_extractor_graph
from .rng import Rng
from .tensor import conv2d_backward_raw, conv2d_raw, sigmoid_raw
from .weights import WeightStore, init_weights

PERCEP_SEED = 73010


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights for the five loss terms."""
    recon: float = 1.0
    distill_g: float = 0.0
    distill_d: float = 0.0
    percep: float = 0.0
    adv: float = 0.0

    def __post_init__(self):
        vals = self.as_tuple()
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ConfigError(f"loss weights must be finite and non-negative: {vals}")

    def as_tuple(self):
        return (self.recon, self.distill_g, self.distill_d, self.percep, self.adv)


@dataclass
class LossParts:
    recon: float = 0.0
    distill_g: float = 0.0
    distill_d: float = 0.0
    percep: float = 0.0
    adv: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return {"recon": float(self.recon), "distill_g": float(self.distill_g),
                "distill_d": float(self.distill_d), "percep": float(self.percep),
                "adv": float(self.adv)}


def total_loss(parts: LossParts, weights: LossWeights) -> float:
    return (weights.recon * parts.recon
            + weights.distill_g * parts.distill_g
            + weights.distill_d * parts.distill_d
            + weights.percep * parts.percep
            + weights.adv * parts.adv)


# ---------------------------------------------------------------------------
# reconstruction

def loss_recon_grad(sr: np.ndarray, gt: np.ndarray):
    if sr.shape != gt.shape:
        raise TapError(f"reconstruction shapes differ: {sr.shape} vs {gt.shape}")
    diff = sr - gt
    val = float(np.abs(diff).mean())
    return val, np.sign(diff) / diff.size


def loss_recon(sr: np.ndarray, gt: np.ndarray) -> float:
    return loss_recon_grad(sr, gt)[0]


# ---------------------------------------------------------------------------
# feature-matching distillation

def tap_channels(graph: NetworkGraph) -> dict[str, int]:
    ch = graph.infer_channels()
    return {label: ch[lid] for label, lid in graph.taps.items()}


@dataclass
class DistillAdapters:
    """Per-tap 1x1 projections from student width to teacher width.

    Labels whose widths already match carry no parameters and act as
    identity. ``params`` maps ``{label}.weight`` / ``{label}.bias``.
    """
    params: dict[str, np.ndarray] = field(default_factory=dict)
    projected: tuple[str, ...] = ()

    @classmethod
    def build(cls, teacher_widths: dict[str, int], student_widths: dict[str, int],
              seed: int) -> "DistillAdapters":
        rng = Rng(seed)
        params: dict[str, np.ndarray] = {}
        projected = []
        for idx, label in enumerate(sorted(teacher_widths)):
            if label not in student_widths:
                raise TapError(f"student taps lack label {label!r}")
            tc, sc = teacher_widths[label], student_widths[label]
            if tc == sc:
                continue
            std = np.sqrt(2.0 / sc)
            params[f"{label}.weight"] = rng.split(idx).normal(
                0.0, std, (tc, sc, 1, 1), dtype=np.float32)
            params[f"{label}.bias"] = np.zeros(tc, dtype=np.float32)
            projected.append(label)
        return cls(params, tuple(projected))

    def apply(self, label: str, s: np.ndarray) -> np.ndarray:
        if label not in self.projected:
            return s
        return conv2d_raw(s, self.params[f"{label}.weight"],
                          self.params[f"{label}.bias"], 1, 0)

    def backward(self, label: str, s: np.ndarray, gout: np.ndarray):
        """Gradients of apply(): (d input, dict of parameter grads)."""
        if label not in self.projected:
            return gout, {}
        ds, dw, db = conv2d_backward_raw(s, self.params[f"{label}.weight"], 1, 0, gout)
        return ds, {f"{label}.weight": dw, f"{label}.bias": db}


def _norm_value_grad(diff: np.ndarray, norm: str):
    if norm not in ("rms", "euclidean"):
        raise ConfigError(f"unknown norm {norm!r} (use 'rms' or 'euclidean')")
    l2 = float(np.sqrt((diff.astype(np.float64) ** 2).sum()))
    if norm == "rms":
        val = l2 / np.sqrt(diff.size)
        denom = np.sqrt(diff.size) * l2
    else:
        val = l2
        denom = l2
    grad = diff / denom if l2 > 0 else np.zeros_like(diff)
    return float(val), grad


def feature_match_loss_grad(teacher_taps: dict[str, np.ndarray],
                            student_taps: dict[str, np.ndarray],
                            labels, adapters: DistillAdapters | None = None,
                            norm: str = "rms"):
    """Mean over labels of ||teacher - adapter(student)|| under ``norm``.

    Returns (value, grads w.r.t. student taps, grads w.r.t. adapter params).
    """
    if adapters is None:
        adapters = DistillAdapters()
    n = len(labels)
    if n == 0:
        raise TapError("feature matching needs at least one tap label")
    total = 0.0
    tap_grads: dict[str, np.ndarray] = {}
    pgrads: dict[str, np.ndarray] = {}
    for label in labels:
        if label not in teacher_taps:
            raise TapError(f"teacher taps lack label {label!r}")
        if label not in student_taps:
            raise TapError(f"student taps lack label {label!r}")
        s = student_taps[label]
        projected = adapters.apply(label, s)
        t = teacher_taps[label]
        if t.shape != projected.shape:
            raise TapError(
                f"tap {label!r}: teacher {t.shape} vs projected student {projected.shape}")
        val, gdiff = _norm_value_grad(t - projected, norm)
        total += val / n
        ds, pg = adapters.backward(label, s, -gdiff / n)
        tap_grads[label] = ds
        for name, arr in pg.items():
            pgrads[name] = pgrads.get(name, 0) + arr
    return total, tap_grads, pgrads


def loss_distill_g(teacher_taps, student_taps, adapters=None, norm="rms") -> float:
    return feature_match_loss_grad(teacher_taps, student_taps, GEN_TAPS,
                                   adapters, norm)[0]


def loss_distill_d(teacher_taps, student_taps, adapters=None, norm="rms") -> float:
    return feature_match_loss_grad(teacher_taps, student_taps, DISC_TAPS,
                                   adapters, norm)[0]


# ---------------------------------------------------------------------------
# perceptual

def percep_extractor(seed: int = PERCEP_SEED):
    """The frozen random feature stack used for the perceptual term."""
    graph = build_percep_extractor_graph()
    return graph, init_weights(graph, seed)


def loss_percep_grad(sr: np.ndarray, gt: np.ndarray,
                     extractor_graph: NetworkGraph, extractor_store: WeightStore):
    fwd_sr = engine.forward(extractor_graph, extractor_store, sr)
    phi_gt = engine.forward(extractor_graph, extractor_store, gt).output
    diff = fwd_sr.output - phi_gt
    val = float((diff ** 2).mean())
    dphi = 2.0 * diff / diff.size
    dsr, _ = engine.backward(extractor_graph, extractor_store, fwd_sr, dphi)
    return val, dsr


def loss_percep(sr, gt, extractor_graph, extractor_store) -> float:
    fwd = engine.forward(extractor_graph, extractor_store, sr).output
    ref = engine.forward(extractor_graph, extractor_store, gt).output
    return float(((fwd - ref) ** 2).mean())


# ---------------------------------------------------------------------------
# adversarial

def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def loss_adv_g_grad(logits: np.ndarray):
    """Non-saturating generator term: mean over patches of -log sigmoid(z)."""
    val = float(_softplus(-logits).mean())
    grad = (sigmoid_raw(logits) - 1.0) / logits.size
    return val, grad


def loss_adv_g(logits: np.ndarray) -> float:
    return loss_adv_g_grad(logits)[0]


def loss_disc_grad(real_logits: np.ndarray, fake_logits: np.ndarray):
    """Binary cross-entropy: mean of -log sigmoid(real) - log(1 - sigmoid(fake))."""
    val = float(_softplus(-real_logits).mean() + _softplus(fake_logits).mean())
    dreal = (sigmoid_raw(real_logits) - 1.0) / real_logits.size
    dfake = sigmoid_raw(fake_logits) / fake_logits.size
    return val, dreal, dfake


def loss_disc(real_logits: np.ndarray, fake_logits: np.ndarray) -> float:
    return loss_disc_grad(real_logits, fake_logits)[0]
