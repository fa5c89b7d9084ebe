"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def numeric_grad(f: Callable[[], Tensor], p: Tensor, h: float = 1e-5) -> np.ndarray:
    """dL/dRe(p) + j dL/dIm(p) by central differences, perturbing ``p.data`` in place."""
    if not p.data.flags.c_contiguous:
        p.data = np.ascontiguousarray(p.data)
    flat = p.data.reshape(-1)
    g = np.zeros_like(flat)
    dirs = (1.0, 1j) if p.is_complex else (1.0,)
    with no_grad():
        for i in range(flat.size):
            for d in dirs:
                orig = flat[i]
                flat[i] = orig + h * d
                fp = float(f().data)
                flat[i] = orig - h * d
                fm = float(f().data)
                flat[i] = orig
                g[i] += d * (fp - fm) / (2 * h)
    return g.reshape(p.shape)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)


def gradcheck(f: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5) -> dict[str, float]:
    """Relative error between analytic and numeric gradients for each parameter."""
    for p in params.values():
        p.grad = None
    f().backward()
    errs = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        errs[name] = relative_error(analytic, numeric_grad(f, p, h))
    return errs
