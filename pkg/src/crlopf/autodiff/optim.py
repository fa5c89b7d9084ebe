"""Adam with moments kept per real coordinate (complex entries count as two)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def _as_real(a: np.ndarray) -> np.ndarray:
    return a.view(np.float64) if a.dtype.kind == "c" else a


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, grads: dict[str, np.ndarray] | None = None) -> None:
    """In-place Adam update with bias correction. Missing gradients count as zero."""
    state.step_count += 1
    t = state.step_count
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        g = np.asarray(g, dtype=p.data.dtype)
        gr = _as_real(np.ascontiguousarray(g))
        if name not in state.m:
            state.m[name] = np.zeros_like(gr)
            state.v[name] = np.zeros_like(gr)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * gr
        v *= state.beta2
        v += (1 - state.beta2) * gr * gr
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        _as_real(p.data)[...] -= step


class Adam:
    """Convenience wrapper that owns a parameter dict and its AdamState."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.state)
