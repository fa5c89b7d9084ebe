"""Reverse-mode autodiff over real and complex numpy arrays.

Complex values are differentiated through their real embedding: for a real
loss L and complex tensor z the stored gradient is dL/dRe(z) + j dL/dIm(z).
Under that convention a holomorphic map y = f(x) propagates g_x = conj(f'(x)) g_y,
and a matrix product Z = X W propagates g_X = g_Z W^H, g_W = X^H g_Z.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(x) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype.kind == "c":
        return a.astype(np.complex128, copy=False)
    return a.astype(np.float64, copy=False)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _fit(g: np.ndarray, t: "Tensor") -> np.ndarray:
    g = _unbroadcast(g, t.shape)
    if not t.is_complex and np.iscomplexobj(g):
        g = g.real
    return g


def _require_real(t: "Tensor", op: str) -> None:
    if t.is_complex:
        raise TypeError(f"{op} is defined for real tensors only")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")
    # make ndarray <op> Tensor dispatch to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 parents: Sequence["Tensor"] = (), backward_fn: Callable | None = None, op: str = "leaf"):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    # --- introspection ---

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_complex(self) -> bool:
        return self.data.dtype.kind == "c"

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self):
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        kind = "complex" if self.is_complex else "real"
        return f"Tensor(shape={self.shape}, {kind}, op={self.op}, requires_grad={self.requires_grad})"

    # --- operator sugar ---

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __getitem__(self, idx): return getitem(self, idx)

    def __pow__(self, p):
        if p == 2:
            return mul(self, self)
        return power(self, p)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)

    # --- reverse sweep ---

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            if self.is_complex:
                raise TypeError("backward() without a seed needs a real output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): _as_array(grad)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _fit(pg, parent)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topo_order(root: Tensor) -> list[Tensor]:
    """Nodes in reverse topological order (root first), each exactly once."""
    seen: set[int] = set()
    post: list[Tensor] = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return post[::-1]


def tensor(x, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


# --- arithmetic ---

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (g * np.conj(b.data), g * np.conj(a.data)), "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data

    def back(g):
        return g / np.conj(b.data), -g * np.conj(out / b.data)

    return _node(out, (a, b), back, "div")


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    _require_real(a, "power")
    return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def _herm(x: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(x, -1, -2)) if x.ndim >= 2 else np.conj(x)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b),
                 lambda g: (g @ _herm(b.data), _herm(a.data) @ g), "matmul")


complex_matmul = matmul


def conj(a) -> Tensor:
    a = _wrap(a)
    return _node(np.conj(a.data), (a,), lambda g: (np.conj(g),), "conj")


def real_part(a) -> Tensor:
    a = _wrap(a)
    return _node(a.data.real.copy(), (a,), lambda g: (np.real(g) + 0j if a.is_complex else np.real(g),), "real")


def imag_part(a) -> Tensor:
    a = _wrap(a)
    if not a.is_complex:
        raise TypeError("imag_part expects a complex tensor")
    return _node(a.data.imag.copy(), (a,), lambda g: (1j * np.real(g),), "imag")


def make_complex(re, im) -> Tensor:
    re, im = _wrap(re), _wrap(im)
    _require_real(re, "make_complex")
    _require_real(im, "make_complex")
    return _node(re.data + 1j * im.data, (re, im), lambda g: (g.real, g.imag), "complex")


def magnitude(a) -> Tensor:
    a = _wrap(a)
    m = np.abs(a.data)
    unit = np.divide(a.data, m, out=np.zeros_like(a.data), where=m > 0)
    return _node(m, (a,), lambda g: (np.real(g) * unit,), "abs")


def square_norm(a) -> Tensor:
    """Elementwise |a|^2 (real output)."""
    a = _wrap(a)
    return _node(np.abs(a.data) ** 2, (a,), lambda g: (2 * np.real(g) * a.data,), "square_norm")


# --- nonlinearities (subgradient 0 at kinks) ---

def relu(a) -> Tensor:
    a = _wrap(a)
    _require_real(a, "relu")
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


relu_plus = relu


def crelu(a) -> Tensor:
    """ReLU applied separately to the real and imaginary parts."""
    a = _wrap(a)
    if not a.is_complex:
        return relu(a)
    mr, mi = a.data.real > 0, a.data.imag > 0
    out = a.data.real * mr + 1j * (a.data.imag * mi)
    return _node(out, (a,), lambda g: (g.real * mr + 1j * (g.imag * mi),), "crelu")


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    _require_real(a, "sigmoid")
    s = np.empty_like(a.data)
    pos = a.data >= 0
    s[pos] = 1 / (1 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    s[~pos] = e / (1 + e)
    return _node(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def tanh(a) -> Tensor:
    a = _wrap(a)
    _require_real(a, "tanh")
    t = np.tanh(a.data)
    return _node(t, (a,), lambda g: (g * (1 - t * t),), "tanh")


def exp(a) -> Tensor:
    a = _wrap(a)
    e = np.exp(a.data)
    return _node(e, (a,), lambda g: (g * np.conj(e),), "exp")


def cos(a) -> Tensor:
    a = _wrap(a)
    _require_real(a, "cos")
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def sin(a) -> Tensor:
    a = _wrap(a)
    _require_real(a, "sin")
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


# --- reductions and shape ops ---

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(out, (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a) -> Tensor:
    """Swap the last two axes (no conjugation)."""
    a = _wrap(a)
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def getitem(a, idx) -> Tensor:
    a = _wrap(a)

    def back(g):
        full = np.zeros(a.shape, dtype=np.result_type(g.dtype, a.data.dtype))
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), back, "getitem")


def concat(items: Sequence, axis: int = -1) -> Tensor:
    items = [_wrap(t) for t in items]
    out = np.concatenate([t.data for t in items], axis=axis)
    edges = np.cumsum([t.shape[axis] for t in items])[:-1]

    def back(g):
        return tuple(np.split(g, edges, axis=axis))

    return _node(out, items, back, "concat")


def stack(items: Sequence, axis: int = 0) -> Tensor:
    items = [_wrap(t) for t in items]
    out = np.stack([t.data for t in items], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))

    return _node(out, items, back, "stack")
