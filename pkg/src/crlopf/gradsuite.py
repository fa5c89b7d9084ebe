"""Finite-difference sweep over every autodiff primitive and the network forward passes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .grid import GridCase, load_case
from .nets import ActorNet, CriticNet, NetConfig, PredictorNet, critic_state_vector

TOL = 1e-5
SMALL_NET = NetConfig(horizon=2, filter_taps=2, temporal_channels=2, graph_features=2, hidden=6, critic_hidden=6)

# A builder draws one random instance: (scalar loss closure, parameters to check).
Builder = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict[str, Tensor]]]


def _rc(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _param(x, name):
    return Tensor(np.asarray(x), requires_grad=True, name=name)


def _binary(fn):
    def build(rng):
        a, b = _param(_rc(rng, 6), "a"), _param(_rc(rng, 6), "b")
        return (lambda: fn(a, b)), {"a": a, "b": b}
    return build


def _unary_real(fn):
    def build(rng):
        # keep entries away from the ReLU kink at zero
        x = rng.standard_normal(6)
        x = np.where(np.abs(x) < 0.05, x + 0.1, x)
        a = _param(x, "a")
        return (lambda: fn(a)), {"a": a}
    return build


def _graph_filter(rng):
    S = ad.shift_powers(ad.normalized_gso(_rc(rng, 4, 4) + _rc(rng, 4, 4).T), 3)
    H = _param(_rc(rng, 3, 2, 3) * 0.5, "H")
    X = _param(_rc(rng, 5, 4, 2), "X")
    return (lambda: ad.square_norm(ad.crelu(ad.graph_filter(H, S, X))).mean()), {"H": H, "X": X}


def _temporal_conv(rng):
    G = _param(_rc(rng, 6, 3), "G")
    X = Tensor(_rc(rng, 2, 4, 6))
    return (lambda: ad.square_norm(ad.crelu(ad.temporal_conv(G, X))).sum()), {"G": G}


def _dense(rng):
    W, b = _param(rng.standard_normal((4, 3)), "W"), _param(rng.standard_normal(3), "b")
    x = Tensor(rng.standard_normal((5, 4)))
    return (lambda: ad.tanh(ad.dense(x, W, b)).sum()), {"W": W, "b": b}


PRIMITIVES: dict[str, Builder] = {
    "add": _binary(lambda a, b: ad.square_norm(a + b).sum()),
    "sub": _binary(lambda a, b: ad.square_norm(a - b * 2).sum()),
    "mul": _binary(lambda a, b: ad.real_part(a * b).sum() + ad.imag_part(a * ad.conj(b)).sum()),
    "div": _binary(lambda a, b: ad.real_part(a / (ad.square_norm(b) + 1)).sum() + ad.imag_part(b / (a + 4)).sum()),
    "matmul": _binary(lambda a, b: ad.square_norm(ad.matmul(a.reshape(2, 3), b.reshape(3, 2))).sum()),
    "conj": _binary(lambda a, b: ad.imag_part(ad.conj(a) * b).sum()),
    "real_part": _binary(lambda a, b: (ad.real_part(a * b) ** 2).sum()),
    "imag_part": _binary(lambda a, b: (ad.imag_part(a * b) ** 2).sum()),
    "magnitude": _binary(lambda a, b: ad.magnitude(a + b).sum()),
    "square_norm": _binary(lambda a, b: (ad.square_norm(a) * ad.real_part(b)).sum()),
    "crelu": _binary(lambda a, b: ad.square_norm(ad.crelu(a * b)).sum()),
    "exp": _binary(lambda a, b: ad.real_part(ad.exp(a * 0.5) * b).sum()),
    "getitem": _binary(lambda a, b: ad.square_norm(a[1:4] * b[[0, 0, 5]]).sum()),
    "concat": _binary(lambda a, b: ad.real_part(ad.concat([a, b * b]) * np.arange(12)).sum()),
    "transpose": _binary(lambda a, b: ad.real_part(ad.transpose(a.reshape(2, 3)) @ b.reshape(2, 3)).sum()),
    "reshape": _binary(lambda a, b: ad.square_norm(ad.reshape(a, (3, 2)) @ ad.reshape(b, (2, 3))).sum()),
    "relu": _unary_real(lambda a: ad.relu(a * 3).sum() + (ad.relu(-a) ** 2).sum()),
    "sigmoid": _unary_real(lambda a: (ad.sigmoid(a) * np.arange(6)).sum()),
    "tanh": _unary_real(lambda a: ad.tanh(a).sum() ** 2),
    "cos": _unary_real(lambda a: (ad.cos(a) * a).sum()),
    "sin": _unary_real(lambda a: (ad.sin(a * 2) * a).sum()),
    "power": _unary_real(lambda a: ad.power(ad.square_norm(a) + 1, 1.5).sum()),
    "tsum": _unary_real(lambda a: (ad.tsum(a.reshape(3, 2), axis=0) ** 2).sum()),
    "mean": _unary_real(lambda a: ad.mean(a.reshape(2, 3) ** 2, axis=1).sum()),
    "stack": _unary_real(lambda a: (ad.stack([a, a * a]) * np.arange(12).reshape(2, 6)).sum()),
    "make_complex": _unary_real(lambda a: ad.square_norm(ad.make_complex(a, a * a) * (1 - 2j)).sum()),
    "broadcast": _unary_real(lambda a: ((a.reshape(1, 6) + np.ones((3, 1))) ** 2).mean()),
    "graph_filter": _graph_filter,
    "temporal_conv": _temporal_conv,
    "dense": _dense,
}


def _features(case: GridCase, rng, T: int, batch: int) -> np.ndarray:
    shape = (batch, case.n_bus, T)
    v = (1 + 0.05 * rng.standard_normal(shape)) * np.exp(1j * 0.1 * rng.standard_normal(shape))
    soc = np.zeros(shape)
    soc[:, case.bess_buses, :] = rng.uniform(0.2, 0.8, size=(batch, case.n_bess, T))
    return np.concatenate([v, soc.astype(complex)], axis=-1)


def _jitter(net, rng) -> None:
    # zero-initialized biases sit on ReLU kinks where finite differences are meaningless
    for p in net.params.values():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape) * (1 if p.data.dtype.kind == "f" else 1 + 1j)


def network_builders(case: GridCase, cfg: NetConfig = SMALL_NET) -> dict[str, Builder]:
    T = cfg.horizon

    def actor(rng):
        net = ActorNet(case, cfg, seed=int(rng.integers(2**31)))
        _jitter(net, rng)
        x = _features(case, rng, T, 2)
        w = rng.standard_normal((2, T, case.action_dim))
        return (lambda: ad.tsum(net(x) * w)), net.params

    def predictor(rng):
        net = PredictorNet(case, cfg, seed=int(rng.integers(2**31)))
        _jitter(net, rng)
        x = _features(case, rng, T, 2)
        w = _rc(rng, 2, T, case.n_bus)

        def loss():
            mag, v = net.forward(x)
            return ad.tsum(mag * w.real) + ad.tsum(ad.real_part(v * w.imag)) + ad.tsum(ad.square_norm(v))

        return loss, net.params

    def critic(rng):
        net = CriticNet(case, cfg, seed=int(rng.integers(2**31)))
        _jitter(net, rng)
        sv = critic_state_vector(_features(case, rng, T, 3), case)
        blk = _param(rng.uniform(size=(3, T, case.action_dim)), "block")
        return (lambda: ad.tsum(ad.square_norm(net(sv, blk)))), {**net.params, "block": blk}

    return {"actor": actor, "predictor": predictor, "critic": critic}


@dataclass
class CheckRow:
    name: str
    instances: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOL


def run_suite(instances: int = 20, seed: int = 0, case: GridCase | None = None,
              only: list[str] | None = None) -> list[CheckRow]:
    """Worst relative error per check over ``instances`` random draws."""
    case = case or load_case("two_bus")
    builders = {**PRIMITIVES, **network_builders(case)}
    if only:
        unknown = sorted(set(only) - set(builders))
        if unknown:
            raise ValueError(f"unknown checks: {unknown}")
        builders = {k: builders[k] for k in only}
    rows = []
    for k, (name, build) in enumerate(builders.items()):
        rng = np.random.default_rng([seed, k])
        worst = 0.0
        for _ in range(instances):
            f, params = build(rng)
            worst = max(worst, max(ad.gradcheck(f, params).values()))
        rows.append(CheckRow(name, instances, worst))
    return rows
