"""Adam with bias correction, shared by all training stages.

The same step routine drives both dense updates and the prefix updates
used when training the weight-shared generator: moments are kept at the
full parameter shape, and a gradient whose shape is a leading sub-block
touches only that region, leaving every other scalar bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def lr_at(iteration: int, base_lr: float, milestones=()) -> float:
    """Halve the base rate once per milestone the iteration has reached."""
    return base_lr * 0.5 ** sum(iteration >= m for m in milestones)


@dataclass
class Adam:
    lr: float
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place from ``grads``.

        A gradient may be shaped like a leading sub-block of its parameter
        (prefix update); anything else is a shape error. The step counter
        is global, so bias correction is shared across all regions.
        """
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if name not in params:
                raise ShapeError(f"gradient for unknown parameter {name!r}")
            p = params[name]
            if g.ndim != p.ndim or any(gs > ps for gs, ps in zip(g.shape, p.shape)):
                raise ShapeError(
                    f"gradient shape {g.shape} is not a prefix of {p.shape} for {name!r}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            region = tuple(slice(0, s) for s in g.shape)
            m = self.m[name]
            v = self.v[name]
            m[region] = self.beta1 * m[region] + (1.0 - self.beta1) * g
            v[region] = self.beta2 * v[region] + (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v[region] / c2) + self.eps
            p[region] -= (self.lr / c1) * m[region] / denom
