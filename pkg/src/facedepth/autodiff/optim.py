"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Update every array in ``params`` in place and advance ``state.step``.

    A missing entry in ``grads`` is treated as a zero gradient.
    """
    if state.step < 0:
        raise ValueError(f"Adam step counter must be >= 0, got {state.step}")
    t = state.step + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            v = state.v[name] = np.zeros_like(p)
        if m.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"Adam state for {name!r} has shape {m.shape}, parameter has {p.shape}")
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
    state.step = t


class Adam:
    """Adam over a fixed, named parameter set (e.g. ``dict(net.named_parameters())``)."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 2e-4, betas=(0.5, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(arrays, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
