"""Adam with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stable import NumericsError


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; weight decay is applied to the weights directly.

    Only names present in ``grads`` are updated. Returns new arrays; the
    inputs are left untouched.
    """
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    out = dict(params)
    for name, g in grads.items():
        w = params[name]
        if w.shape != g.shape:
            raise NumericsError(f"shape mismatch for {name}: {w.shape} vs {g.shape}")
        m = b1 * state.m.get(name, np.zeros_like(w)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(w)) + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        out[name] = w - state.lr * (mhat / (np.sqrt(vhat) + state.eps) + state.weight_decay * w)
    state.step = t
    return out, state
