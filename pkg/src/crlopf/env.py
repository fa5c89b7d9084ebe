"""Multi-period dispatch environment with battery storage and AC power flow."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import BessParams, GridCase
from .powerflow import PowerFlowError, solve_dispatch, slack_generation

SOC_TOL = 1e-9
FEAS_TOL = 1e-6
LOW_VOLTAGE = 0.7


@dataclass(frozen=True)
class PhysicalAction:
    g_p: np.ndarray
    g_q: np.ndarray
    p_ch: np.ndarray
    p_dis: np.ndarray


@dataclass(frozen=True)
class EnvState:
    """Sliding window of the last T voltage phasors and SOC vectors (newest first)."""

    v_history: np.ndarray  # (T, N) complex
    soc_history: np.ndarray  # (T, N) real, zero off the BESS buses
    t: int = 0

    @property
    def horizon(self) -> int:
        return self.v_history.shape[0]

    @property
    def v(self) -> np.ndarray:
        return self.v_history[0]

    @property
    def soc(self) -> np.ndarray:
        return self.soc_history[0]

    def features(self) -> np.ndarray:
        """N x 2T complex input: T voltage frames followed by T SOC frames."""
        return np.concatenate([self.v_history.T, self.soc_history.T.astype(complex)], axis=1)


@dataclass
class ScenarioConfig:
    episode_len: int = 192
    diurnal_harmonics: list = field(default_factory=lambda: [[0.15, 0.0], [0.05, 0.1]])
    noise_sigma: float = 0.02
    wind_buses: list = field(default_factory=list)  # 1-indexed bus ids
    wind_scale: float = 0.0
    seed: int = 0
    day_len: int = 96
    lookahead: int = 16

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class Scenario:
    d_p: np.ndarray  # (episode_len + lookahead, N), wind already subtracted
    d_q: np.ndarray
    wind: np.ndarray  # (episode_len + lookahead, N) injection that was folded into d_p
    seed: int
    episode_len: int


def diurnal_profile(cfg: ScenarioConfig, length: int) -> np.ndarray:
    t = np.arange(length)
    m = np.ones(length)
    for h, (amp, phase) in enumerate(cfg.diurnal_harmonics, start=1):
        m += amp * np.sin(2 * np.pi * (h * t / cfg.day_len + phase))
    return m


def generate_scenario(case: GridCase, cfg: ScenarioConfig, seed: int | None = None) -> Scenario:
    """Base load x diurnal multiplier x mean-one lognormal noise, minus wind."""
    seed = cfg.seed if seed is None else seed
    length = cfg.episode_len + cfg.lookahead
    if cfg.episode_len < 1:
        raise ValueError("episode_len must be positive")
    rng = np.random.default_rng(seed)
    prof = diurnal_profile(cfg, length)[:, None]
    s = cfg.noise_sigma
    noise_p = np.exp(s * rng.standard_normal((length, case.n_bus)) - s * s / 2)
    noise_q = np.exp(s * rng.standard_normal((length, case.n_bus)) - s * s / 2)
    d_p = case.d_p[None, :] * prof * noise_p
    d_q = case.d_q[None, :] * prof * noise_q
    wind = np.zeros((length, case.n_bus))
    for bus in cfg.wind_buses:
        i = int(bus) - 1
        w = np.empty(length)
        w[0] = rng.uniform(0.25, 0.75) * cfg.wind_scale
        steps = rng.standard_normal(length - 1) * 0.03 * cfg.wind_scale
        for k in range(1, length):
            w[k] = min(max(w[k - 1] + steps[k - 1], 0.0), cfg.wind_scale)
        wind[:, i] += w
    return Scenario(d_p=d_p - wind, d_q=d_q, wind=wind, seed=seed, episode_len=cfg.episode_len)


def check_unit_interval(a: np.ndarray, what: str = "action") -> None:
    a = np.asarray(a)
    if not np.all(np.isfinite(a)) or a.min(initial=0.0) < 0 or a.max(initial=0.0) > 1:
        raise ValueError(f"{what} entries must lie in [0, 1]")


def split_row(row: np.ndarray, case: GridCase):
    G, B = case.n_gen, case.n_bess
    return row[..., :G], row[..., G:2 * G], row[..., 2 * G:2 * G + B], row[..., 2 * G + B:]


def denormalize(a_hat_row: np.ndarray, case: GridCase) -> PhysicalAction:
    a = np.asarray(a_hat_row, dtype=float)
    if a.shape[-1] != case.action_dim:
        raise ValueError(f"action row has {a.shape[-1]} entries, expected {case.action_dim}")
    check_unit_interval(a)
    gp, gq, ch, dis = split_row(a, case)
    return PhysicalAction(
        g_p=(1 - gp) * case.gen_p_min + gp * case.gen_p_max,
        g_q=(1 - gq) * case.gen_q_min + gq * case.gen_q_max,
        p_ch=ch * case.bess.p_ch_rated,
        p_dis=dis * case.bess.p_dis_rated,
    )


def _safe_div(x, y):
    y = np.asarray(y, dtype=float)
    return np.divide(x, y, out=np.zeros(np.broadcast(x, y).shape), where=y > 0)


def normalize(action: PhysicalAction, case: GridCase) -> np.ndarray:
    """Inverse of :func:`denormalize`, clipped to [0, 1]."""
    gp = _safe_div(action.g_p - case.gen_p_min, case.gen_p_max - case.gen_p_min)
    gq = _safe_div(action.g_q - case.gen_q_min, case.gen_q_max - case.gen_q_min)
    ch = _safe_div(action.p_ch, case.bess.p_ch_rated)
    dis = _safe_div(action.p_dis, case.bess.p_dis_rated)
    return np.clip(np.concatenate([gp, gq, ch, dis], axis=-1), 0.0, 1.0)


def soc_step(soc, p_ch, p_dis, bess: BessParams) -> np.ndarray:
    """One step of the SOC recursion, before any clamping."""
    return soc + bess.dt_over_ecap * (bess.eta_ch * p_ch - p_dis / bess.eta_dis)


def clamp_action_for_soc(soc, p_ch, p_dis, soc_min=0.0, soc_max=1.0, tol: float = SOC_TOL):
    """Zero charging on a full battery and discharging on an empty one."""
    soc = np.asarray(soc, dtype=float)
    p_ch = np.where(soc >= np.asarray(soc_max) - tol, 0.0, p_ch)
    p_dis = np.where(soc <= np.asarray(soc_min) + tol, 0.0, p_dis)
    return p_ch, p_dis


def project_soc(soc, p_ch, p_dis, bess: BessParams):
    """Trim battery power so the next SOC lands inside [soc_min, soc_max].

    Trimming the power (instead of clipping SOC alone) keeps the recursion exact
    for the power actually exchanged with the grid.
    """
    k = bess.dt_over_ecap
    p_ch = np.array(p_ch, dtype=float)
    p_dis = np.array(p_dis, dtype=float)
    nxt = soc_step(soc, p_ch, p_dis, bess)
    over = nxt > bess.soc_max
    if np.any(over):
        room = (bess.soc_max - soc) / k + p_dis / bess.eta_dis
        p_ch = np.where(over, np.clip(room / bess.eta_ch, 0.0, p_ch), p_ch)
    nxt = soc_step(soc, p_ch, p_dis, bess)
    under = nxt < bess.soc_min
    if np.any(under):
        room = (soc - bess.soc_min) / k + bess.eta_ch * p_ch
        p_dis = np.where(under, np.clip(room * bess.eta_dis, 0.0, p_dis), p_dis)
    nxt = np.clip(soc_step(soc, p_ch, p_dis, bess), bess.soc_min, bess.soc_max)
    return nxt, p_ch, p_dis


def fuel_cost(g_p, case: GridCase):
    return np.sum(case.cost_a * g_p ** 2 + case.cost_b * g_p + case.cost_c, axis=-1)


def storage_loss(p_ch, p_dis, bess: BessParams):
    return np.sum((1 - bess.eta_ch) * p_ch + (1 / bess.eta_dis - 1) * p_dis, axis=-1)


def reward(action: PhysicalAction, case: GridCase) -> float:
    return float(-fuel_cost(action.g_p, case) - storage_loss(action.p_ch, action.p_dis, case.bess))


def constraint_violation(info: dict, case: GridCase) -> float:
    """Sum of rectified bound violations at the realized operating point."""
    if info.get("failed"):
        return 0.0
    vm = info["vm"]
    k = case.slack_gen
    p = info["slack_p"]
    return float(
        np.sum(np.maximum(vm - case.v_max, 0)) + np.sum(np.maximum(case.v_min - vm, 0))
        + max(p - case.gen_p_max[k], 0.0) + max(case.gen_p_min[k] - p, 0.0)
    )


def dispatch_power_flow(case: GridCase, g_p, g_q, p_ch, p_dis, d_p, d_q, v0=None):
    """Warm-started solve with a flat-start retry.

    The retry triggers on failure or when the warm start lands on a low-voltage
    branch of the power-flow solutions.
    """
    if v0 is not None:
        try:
            res, _ = solve_dispatch(case, g_p, g_q, p_ch, p_dis, d_p, d_q, v0=v0)
            if np.abs(res.v).min() >= LOW_VOLTAGE:
                return res
        except PowerFlowError:
            pass
    res, _ = solve_dispatch(case, g_p, g_q, p_ch, p_dis, d_p, d_q)
    return res


def initial_state(case: GridCase, scenario: Scenario, horizon: int, soc0=None) -> EnvState:
    """History filled with the power flow of a mid-range dispatch at the first demand."""
    mid = denormalize(np.full(case.action_dim, 0.5), case)
    z = np.zeros(case.n_bess)
    try:
        res, _ = solve_dispatch(case, mid.g_p, mid.g_q, z, z, scenario.d_p[0], scenario.d_q[0])
        v = res.v
    except PowerFlowError:
        v = np.ones(case.n_bus, dtype=complex)
    soc_b = np.full(case.n_bess, 0.5) if soc0 is None else np.asarray(soc0, dtype=float)
    soc = np.zeros(case.n_bus)
    soc[case.bess_buses] = soc_b
    return EnvState(np.tile(v, (horizon, 1)), np.tile(soc, (horizon, 1)), t=0)


def env_step(state: EnvState, block: np.ndarray, scenario: Scenario, case: GridCase,
             r_fail: float = -100.0):
    """Apply the first row of an action block; return (next_state, reward, info)."""
    block = np.atleast_2d(np.asarray(block, dtype=float))
    check_unit_interval(block, "action block")
    t = state.t
    if t >= len(scenario.d_p):
        raise IndexError("scenario exhausted")
    act = denormalize(block[0], case)
    bess = case.bess
    soc_b = state.soc[case.bess_buses]
    p_ch, p_dis = clamp_action_for_soc(soc_b, act.p_ch, act.p_dis, bess.soc_min, bess.soc_max)
    soc_next, p_ch, p_dis = project_soc(soc_b, p_ch, p_dis, bess)
    d_p, d_q = scenario.d_p[t], scenario.d_q[t]

    info = {"t": t, "failed": False}
    try:
        res = dispatch_power_flow(case, act.g_p, act.g_q, p_ch, p_dis, d_p, d_q, v0=state.v)
        v = res.v
        info["iterations"] = res.iterations
        info["mismatch"] = res.mismatch
    except PowerFlowError as exc:
        info["failed"] = True
        info["error"] = str(exc)
        v = state.v
    k = case.slack_gen
    g_p, g_q = act.g_p.copy(), act.g_q.copy()
    if not info["failed"]:
        g_p[k], g_q[k] = slack_generation(case, v, act.g_p, act.g_q, p_ch, p_dis, d_p, d_q)
    applied = PhysicalAction(g_p, g_q, p_ch, p_dis)
    r = r_fail if info["failed"] else reward(applied, case)

    vm = np.abs(v)
    info.update(
        applied=applied,
        vm=vm,
        slack_p=float(g_p[k]),
        slack_q=float(g_q[k]),
        soc=soc_next,
        feasible_vm=bool(not info["failed"] and np.all(vm >= case.v_min - FEAS_TOL)
                         and np.all(vm <= case.v_max + FEAS_TOL)),
        feasible_slack=bool(not info["failed"] and case.gen_p_min[k] - FEAS_TOL <= g_p[k]
                            <= case.gen_p_max[k] + FEAS_TOL),
    )
    soc_vec = np.zeros(case.n_bus)
    soc_vec[case.bess_buses] = soc_next
    nxt = EnvState(
        v_history=np.vstack([v[None, :], state.v_history[:-1]]),
        soc_history=np.vstack([soc_vec[None, :], state.soc_history[:-1]]),
        t=t + 1,
    )
    return nxt, r, info


class GridEnv:
    """Stateful wrapper that walks one scenario at a time."""

    def __init__(self, case: GridCase, horizon: int, scenario_cfg: ScenarioConfig,
                 r_fail: float = -100.0, soc0=None):
        self.case = case
        self.horizon = horizon
        self.cfg = scenario_cfg
        self.r_fail = r_fail
        self.soc0 = soc0
        self.scenario: Scenario | None = None
        self.state: EnvState | None = None
        if scenario_cfg.lookahead < horizon:
            self.cfg = replace(scenario_cfg, lookahead=horizon)

    def reset(self, seed: int) -> EnvState:
        self.scenario = generate_scenario(self.case, self.cfg, seed)
        self.state = initial_state(self.case, self.scenario, self.horizon, self.soc0)
        return self.state

    def demand_window(self, t: int):
        """Demands for times t .. t+T-1 (the horizon an action block covers)."""
        sl = slice(t, t + self.horizon)
        return self.scenario.d_p[sl], self.scenario.d_q[sl]

    def step(self, block: np.ndarray):
        nxt, r, info = env_step(self.state, block, self.scenario, self.case, self.r_fail)
        self.state = nxt
        info["done"] = info["failed"] or nxt.t >= self.scenario.episode_len
        return nxt, r, info
