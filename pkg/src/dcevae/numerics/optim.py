from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError


class NumericalError(FloatingPointError):
    """A loss or gradient became non-finite."""


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **hyper,
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              names: list[str] | None = None):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Raises NumericalError on any non-finite gradient instead of skipping it.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeError(f"adam_step: param {i} shape {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            raise NumericalError(f"non-finite gradient for parameter {label}")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
