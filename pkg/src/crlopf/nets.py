"""Actor, voltage predictor and critic networks on top of the autodiff engine."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .env import EnvState
from .grid import GridCase


@dataclass
class NetConfig:
    horizon: int = 4
    filter_taps: int = 3  # K
    temporal_channels: int = 8  # K_t
    graph_features: int = 8
    hidden: int = 256
    critic_hidden: int = 256
    normalize_gso: bool = True
    angle_scale: float = 0.5  # predicted angles lie in (-angle_scale, angle_scale) rad
    bound_margin: float = 0.0  # fraction of each range kept clear by the slack head and predictor

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown net keys: {sorted(extra)}")
        return cls(**d)


class Module:
    """A named bag of parameter tensors."""

    params: dict[str, Tensor]

    def parameter_count(self) -> int:
        return int(sum(p.data.size * (2 if p.is_complex else 1) for p in self.params.values()))

    def copy(self):
        clone = copy.copy(self)
        clone.params = {k: Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in self.params.items()}
        return clone

    def zero_(self) -> None:
        for p in self.params.values():
            p.data[...] = 0

    def _param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.ascontiguousarray(value), requires_grad=True, name=name)
        self.params[name] = t
        return t


def state_features(states: list[EnvState] | EnvState) -> np.ndarray:
    """Batch of N x 2T complex node features."""
    if isinstance(states, EnvState):
        return states.features()
    return np.stack([s.features() for s in states])


def critic_state_vector(features: np.ndarray, case: GridCase) -> np.ndarray:
    """Real encoding of a feature batch: Re/Im of the voltage frames plus the BESS SOC frames."""
    T = features.shape[-1] // 2
    v = features[..., :T]
    soc = features[..., case.bess_buses, T:].real
    lead = features.shape[:-2]
    return np.concatenate([v.real.reshape(lead + (-1,)), v.imag.reshape(lead + (-1,)),
                           soc.reshape(lead + (-1,))], axis=-1)


class GraphTrunk(Module):
    """temporal conv -> graph filter -> CReLU -> two ReLU dense layers (real embedding)."""

    def __init__(self, prefix: str, case: GridCase, cfg: NetConfig, rng: np.random.Generator, params: dict):
        self.params = params
        self.prefix = prefix
        T, N = cfg.horizon, case.n_bus
        S = ad.normalized_gso(case.Y) if cfg.normalize_gso else case.Y
        self.S_pows = ad.shift_powers(S, cfg.filter_taps)
        F = cfg.graph_features
        self._param(f"{prefix}.gamma", ad.glorot(rng, 2 * T, cfg.temporal_channels, complex_=True))
        self._param(f"{prefix}.H", ad.glorot(rng, cfg.temporal_channels, F,
                                             shape=(cfg.filter_taps, cfg.temporal_channels, F), complex_=True))
        d_in = 2 * N * F
        self._param(f"{prefix}.W1", ad.glorot(rng, d_in, cfg.hidden))
        self._param(f"{prefix}.b1", np.zeros(cfg.hidden))
        self._param(f"{prefix}.W2", ad.glorot(rng, cfg.hidden, cfg.hidden))
        self._param(f"{prefix}.b2", np.zeros(cfg.hidden))

    def __call__(self, x) -> Tensor:
        p, pre = self.params, self.prefix
        x = ad.tensor(x)
        lead = x.shape[:-2]
        z = ad.temporal_conv(p[f"{pre}.gamma"], x)
        z = ad.crelu(ad.graph_filter(p[f"{pre}.H"], self.S_pows, z))
        flat = ad.concat([ad.real_part(z).reshape(lead + (-1,)), ad.imag_part(z).reshape(lead + (-1,))], axis=-1)
        if not lead:
            flat = flat.reshape(1, -1)
        h = ad.relu(ad.dense(flat, p[f"{pre}.W1"], p[f"{pre}.b1"]))
        h = ad.relu(ad.dense(h, p[f"{pre}.W2"], p[f"{pre}.b2"]))
        return h


class ActorNet(Module):
    """Policy producing a T x (2G + 2B) block in (0, 1).

    Two independent graph trunks: one drives the active heads (g^p, p_ch, p_dis),
    the other the reactive head (g^q).
    """

    def __init__(self, case: GridCase, cfg: NetConfig, seed: int = 0):
        self.case, self.cfg = case, cfg
        self.params = {}
        rng = np.random.default_rng(seed)
        G, B, T = case.n_gen, case.n_bess, cfg.horizon
        self.active = GraphTrunk("act_p", case, cfg, rng, self.params)
        self.reactive = GraphTrunk("act_q", case, cfg, rng, self.params)
        self._param("act_p.Wo", ad.glorot(rng, cfg.hidden, T * (G + 2 * B)))
        self._param("act_p.bo", np.zeros(T * (G + 2 * B)))
        self._param("act_q.Wo", ad.glorot(rng, cfg.hidden, T * G))
        self._param("act_q.bo", np.zeros(T * G))
        lo = np.zeros(case.action_dim)
        hi = np.ones(case.action_dim)
        # the slack head reports the generation the network expects the swing unit to supply
        lo[case.slack_gen] = cfg.bound_margin
        hi[case.slack_gen] = 1 - cfg.bound_margin
        self.out_lo, self.out_scale = lo, hi - lo

    def __call__(self, x) -> Tensor:
        """Features (..., N, 2T) -> block (batch, T, 2G+2B)."""
        G, T = self.case.n_gen, self.cfg.horizon
        p = self.params
        za = ad.dense(self.active(x), p["act_p.Wo"], p["act_p.bo"]).reshape(-1, T, G + 2 * self.case.n_bess)
        zq = ad.dense(self.reactive(x), p["act_q.Wo"], p["act_q.bo"]).reshape(-1, T, G)
        z = ad.concat([za[:, :, :G], zq, za[:, :, G:]], axis=-1)
        return ad.sigmoid(z) * self.out_scale + self.out_lo

    def act(self, state: EnvState) -> np.ndarray:
        with ad.no_grad():
            return self(state.features()).data[0]


class PredictorNet(Module):
    """Voltage predictor: magnitudes inside [v_min, v_max] and bounded angles for the horizon.

    The slack bus is pinned to 1 at angle 0, matching the power-flow reference.
    """

    def __init__(self, case: GridCase, cfg: NetConfig, seed: int = 1):
        self.case, self.cfg = case, cfg
        self.params = {}
        rng = np.random.default_rng(seed)
        T, N = cfg.horizon, case.n_bus
        self.trunk = GraphTrunk("pred", case, cfg, rng, self.params)
        self._param("pred.Wo", ad.glorot(rng, cfg.hidden, 2 * T * N))
        self._param("pred.bo", np.zeros(2 * T * N))
        span = case.v_max - case.v_min
        self.v_lo = case.v_min + cfg.bound_margin * span
        self.v_span = span * (1 - 2 * cfg.bound_margin)
        self.free = np.ones(N)
        self.free[case.slack_bus] = 0.0
        self.pinned = 1.0 - self.free

    def forward(self, x) -> tuple[Tensor, Tensor]:
        """Return (|v^p|, v^p) with shapes (batch, T, N)."""
        T, N = self.cfg.horizon, self.case.n_bus
        z = ad.dense(self.trunk(x), self.params["pred.Wo"], self.params["pred.bo"]).reshape(-1, T, 2 * N)
        mag = ad.sigmoid(z[:, :, :N]) * self.v_span + self.v_lo
        mag = mag * self.free + self.pinned
        ang = ad.tanh(z[:, :, N:]) * (self.cfg.angle_scale * self.free)
        v = ad.make_complex(mag * ad.cos(ang), mag * ad.sin(ang))
        return mag, v

    def __call__(self, x) -> Tensor:
        return self.forward(x)[0]


class CriticNet(Module):
    """Three ReLU layers and a scalar head on [state encoding, flattened block]."""

    def __init__(self, case: GridCase, cfg: NetConfig, seed: int = 2):
        self.case, self.cfg = case, cfg
        self.params = {}
        rng = np.random.default_rng(seed)
        T, N, B = cfg.horizon, case.n_bus, case.n_bess
        d_in = 2 * T * N + T * B + T * case.action_dim
        h = cfg.critic_hidden
        dims = [d_in, h, h, h, 1]
        for i in range(4):
            self._param(f"W{i}", ad.glorot(rng, dims[i], dims[i + 1]))
            self._param(f"b{i}", np.zeros(dims[i + 1]))

    def __call__(self, state_vec, block) -> Tensor:
        """state_vec (batch, S) real, block (batch, T, A) -> (batch,) values."""
        block = ad.tensor(block)
        x = ad.concat([ad.tensor(state_vec), block.reshape(block.shape[0], -1)], axis=-1)
        p = self.params
        for i in range(3):
            x = ad.relu(ad.dense(x, p[f"W{i}"], p[f"b{i}"]))
        return ad.dense(x, p["W3"], p["b3"]).reshape(-1)


def clipped_target(r, gamma: float, q1, q2, not_done=1.0):
    """r + gamma * min(Q1', Q2'); ``not_done`` zeroes the bootstrap after a terminal failure."""
    return np.asarray(r) + gamma * np.asarray(not_done) * np.minimum(q1, q2)


def soft_update(target: Module, online: Module, tau: float) -> None:
    if set(target.params) != set(online.params):
        raise ValueError("target and online networks have different parameters")
    for k, t in target.params.items():
        o = online.params[k]
        if t.shape != o.shape:
            raise ValueError(f"{k}: shape {t.shape} vs {o.shape}")
        t.data[...] = tau * o.data + (1 - tau) * t.data
