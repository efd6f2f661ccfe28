"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """Return updated copies of ``params``; ``state`` is advanced in place.

    Moments are created lazily on the first call so that they match the
    parameter shapes.
    """
    if len(params) != len(grads):
        raise ValueError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float32) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float32) for p in params]
    if len(state.m) != len(params):
        raise ValueError("adam_step: state was initialised for a different parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ValueError(f"adam_step: shape mismatch for parameter {i}: {p.shape} vs grad {g.shape}")
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        upd = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        out.append((p - upd).astype(np.float32))
    return out
