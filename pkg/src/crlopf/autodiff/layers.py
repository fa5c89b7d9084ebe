"""Layer primitives built from the differentiable ops."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, getitem, matmul, tensor


def shift_powers(S: np.ndarray, K: int) -> np.ndarray:
    """Stack [S^0, S^1, ..., S^{K-1}] along a leading axis."""
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("graph shift operator must be square")
    if K < 1:
        raise ValueError("filter order must be at least 1")
    out = np.empty((K,) + S.shape, dtype=np.result_type(S.dtype, float))
    out[0] = np.eye(S.shape[0])
    for k in range(1, K):
        out[k] = out[k - 1] @ S
    return out


def normalized_gso(Y: np.ndarray, iters: int = 200, seed: int = 0) -> np.ndarray:
    """Y divided by its spectral-radius estimate from power iteration."""
    Y = np.asarray(Y, dtype=complex)
    x = np.random.default_rng(seed).standard_normal(Y.shape[0]) + 0j
    rho = 0.0
    for _ in range(iters):
        y = Y @ x
        rho = np.linalg.norm(y)
        if rho == 0:
            return Y.copy()
        x = y / rho
    return Y / rho


def graph_filter(H: Tensor, S_pows: np.ndarray, X) -> Tensor:
    """sum_k S^k X H_k for X of shape (..., N, F) and taps H of shape (K, F, F')."""
    H = tensor(H)
    X = tensor(X)
    K = H.shape[0]
    if S_pows.shape[0] < K:
        raise ValueError(f"need {K} shift powers, got {S_pows.shape[0]}")
    if X.shape[-2] != S_pows.shape[-1]:
        raise ValueError(f"signal has {X.shape[-2]} nodes, shift operator has {S_pows.shape[-1]}")
    if X.shape[-1] != H.shape[1]:
        raise ValueError(f"signal has {X.shape[-1]} features, taps expect {H.shape[1]}")
    out = matmul(X, getitem(H, 0))
    for k in range(1, K):
        out = out + matmul(matmul(S_pows[k], X), getitem(H, k))
    return out


def temporal_conv(gamma: Tensor, X) -> Tensor:
    """Full-width kernel over the stacked time/channel axis: (..., N, 2T) @ (2T, K_t)."""
    return matmul(tensor(X), tensor(gamma))


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return matmul(x, W) + b


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, complex_: bool = False) -> np.ndarray:
    shape = (fan_in, fan_out) if shape is None else shape
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    if not complex_:
        return rng.uniform(-lim, lim, size=shape)
    # split the variance between real and imaginary parts
    lim /= np.sqrt(2.0)
    return rng.uniform(-lim, lim, size=shape) + 1j * rng.uniform(-lim, lim, size=shape)
