"""Adam optimizer over named quaternion parameters.

The update is standard Adam applied independently to every real component of
every parameter; moment accumulators share the parameter shapes (component
axis included).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError
from .qtensor import QTensor

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, QTensor], grads: dict[str, QTensor],
              state: AdamState) -> tuple[dict[str, QTensor], AdamState]:
    """One Adam update, in place on the parameter tensors.

    First/second moments are created lazily per parameter; the step counter
    increments once per call.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if name not in grads:
            raise ShapeMismatchError(f"missing gradient for parameter {name!r}")
        g = grads[name].data
        if g.shape != p.data.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}"
            )
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.epsilon)
        p.data -= update.astype(p.data.dtype, copy=False)
    return params, state
