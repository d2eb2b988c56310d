"""Bias-corrected Adam over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingAborted
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the step counter."""

    alpha: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> None:
    """One in-place update.  Raises TrainingAborted on non-finite gradients."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(
                f"non-finite gradient for parameter {name!r} at step {state.t}"
            )
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (state.alpha * mhat / (np.sqrt(vhat) + state.eps)).astype(
            p.data.dtype
        )
