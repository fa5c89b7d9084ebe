"""Multi-period AC OPF with perfect foresight over a short horizon.

Decision variables per step: g^p, g^q, p_ch, p_dis, soc, and the phasors of the
non-slack buses in polar form. Every variable is boxed. Power balance and the
SOC recursion are equalities handled by an augmented-Lagrangian outer loop. Each inner
problem is minimized over the box by projected Newton iterations.
The problem is nonconvex, so results are local optima.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .env import PhysicalAction, Scenario, reward
from .grid import GridCase
from .powerflow import complex_injections, d2S_dV2, dS_dV

ANGLE_LIMIT = 1.0  # rad


class OracleError(RuntimeError):
    pass


class Infeasible(OracleError):
    pass


class MaxIterations(OracleError):
    def __init__(self, message: str, result: "OracleResult"):
        super().__init__(message)
        self.result = result


@dataclass
class OracleOptions:
    tol: float = 1e-6
    max_outer: int = 40
    max_inner: int = 200
    rho0: float = 100.0
    rho_max: float = 1e7
    restarts: int = 5
    seed: int = 0
    strict: bool = True


@dataclass(frozen=True)
class OracleProblem:
    case: GridCase
    d_p: np.ndarray  # (T, N)
    d_q: np.ndarray
    soc0: np.ndarray  # (B,)

    def __post_init__(self):
        d_p = np.atleast_2d(np.asarray(self.d_p, dtype=float))
        d_q = np.atleast_2d(np.asarray(self.d_q, dtype=float))
        object.__setattr__(self, "d_p", d_p)
        object.__setattr__(self, "d_q", d_q)
        object.__setattr__(self, "soc0", np.asarray(self.soc0, dtype=float).reshape(-1))
        if d_p.shape != d_q.shape or d_p.shape[1] != self.case.n_bus or d_p.shape[0] < 1:
            raise ValueError("demand arrays must have shape (T, N) with T >= 1")
        if not (np.all(np.isfinite(d_p)) and np.all(np.isfinite(d_q))):
            raise ValueError("demands must be finite")
        if len(self.soc0) != self.case.n_bess:
            raise ValueError("soc0 length must equal the number of BESSs")

    @property
    def horizon(self) -> int:
        return self.d_p.shape[0]


@dataclass
class OracleResult:
    actions: list[PhysicalAction]
    voltages: np.ndarray  # (T, N) complex
    soc: np.ndarray  # (T, B)
    objective: float  # total cost; the matching reward is -objective
    kkt: dict[str, float]
    converged: bool
    outer_iterations: int = 0
    history: list[float] = field(default_factory=list)


class _Layout:
    def __init__(self, case: GridCase, T: int):
        self.case, self.T = case, T
        G, B, N = case.n_gen, case.n_bess, case.n_bus
        self.ns = np.array([i for i in range(N) if i != case.slack_bus], dtype=int)
        sizes = [("gp", G), ("gq", G), ("ch", B), ("dis", B), ("soc", B), ("va", N - 1), ("vm", N - 1)]
        self.sl, off = {}, 0
        for name, n in sizes:
            self.sl[name] = slice(off, off + n)
            off += n
        self.nv = off
        self.n = off * T

    def cols(self, t: int, name: str) -> slice:
        s = self.sl[name]
        return slice(t * self.nv + s.start, t * self.nv + s.stop)

    def split(self, z):
        Z = z.reshape(self.T, self.nv)
        return {k: Z[:, s] for k, s in self.sl.items()}

    def bounds(self):
        c = self.case
        lo = np.empty(self.nv)
        hi = np.empty(self.nv)
        for name, (l, h) in {
            "gp": (c.gen_p_min, c.gen_p_max), "gq": (c.gen_q_min, c.gen_q_max),
            "ch": (0 * c.bess.p_ch_rated, c.bess.p_ch_rated), "dis": (0 * c.bess.p_dis_rated, c.bess.p_dis_rated),
            "soc": (c.bess.soc_min, c.bess.soc_max),
            "va": (-ANGLE_LIMIT * np.ones(len(self.ns)), ANGLE_LIMIT * np.ones(len(self.ns))),
            "vm": (c.v_min[self.ns], c.v_max[self.ns]),
        }.items():
            lo[self.sl[name]] = l
            hi[self.sl[name]] = h
        return np.tile(lo, self.T), np.tile(hi, self.T)

    def voltages(self, parts) -> np.ndarray:
        v = np.ones((self.T, self.case.n_bus), dtype=complex)
        v[:, self.ns] = parts["vm"] * np.exp(1j * parts["va"])
        return v


def _objective(lay: _Layout, z):
    c, p = lay.case, lay.split(z)
    bess = c.bess
    f = float(np.sum(c.cost_a * p["gp"] ** 2 + c.cost_b * p["gp"] + c.cost_c)
              + np.sum((1 - bess.eta_ch) * p["ch"] + (1 / bess.eta_dis - 1) * p["dis"]))
    g = np.zeros((lay.T, lay.nv))
    g[:, lay.sl["gp"]] = 2 * c.cost_a * p["gp"] + c.cost_b
    g[:, lay.sl["ch"]] = 1 - bess.eta_ch
    g[:, lay.sl["dis"]] = 1 / bess.eta_dis - 1
    return f, g.ravel()


def _objective_hess_diag(lay: _Layout) -> np.ndarray:
    d = np.zeros((lay.T, lay.nv))
    d[:, lay.sl["gp"]] = 2 * lay.case.cost_a
    return d.ravel()


def _constraints(lay: _Layout, prob: OracleProblem, z, jac: bool = True):
    """Stacked per-step [p balance (N); q balance (N); soc recursion (B)] and its Jacobian.

    The soc rows are divided by dt/E_cap so that they read in power units like the balance
    rows; unscaled, their multipliers grow like 1/(dt/E_cap) and the empty-battery vertex
    becomes badly conditioned.
    """
    c, p = lay.case, lay.split(z)
    N, B, T = c.n_bus, c.n_bess, lay.T
    m = c.maps
    bess = c.bess
    k = bess.dt_over_ecap
    v = lay.voltages(p)
    ne = 2 * N + B
    h = np.zeros((T, ne))
    J = np.zeros((T * ne, lay.n)) if jac else None
    ns = lay.ns
    for t in range(T):
        s = complex_injections(v[t], c.Y)
        h[t, :N] = m.m_g @ p["gp"][t] + m.m_b @ (p["dis"][t] - p["ch"][t]) - prob.d_p[t] - s.real
        h[t, N:2 * N] = m.m_g @ p["gq"][t] - prob.d_q[t] - s.imag
        prev = prob.soc0 if t == 0 else p["soc"][t - 1]
        h[t, 2 * N:] = (p["soc"][t] - prev) / k - (bess.eta_ch * p["ch"][t] - p["dis"][t] / bess.eta_dis)
        if not jac:
            continue
        r0 = t * ne
        rows_p, rows_q, rows_s = slice(r0, r0 + N), slice(r0 + N, r0 + 2 * N), slice(r0 + 2 * N, r0 + ne)
        dva, dvm = dS_dV(v[t], c.Y)
        J[rows_p, lay.cols(t, "gp")] = m.m_g
        J[rows_p, lay.cols(t, "ch")] = -m.m_b
        J[rows_p, lay.cols(t, "dis")] = m.m_b
        J[rows_p, lay.cols(t, "va")] = -dva.real[:, ns]
        J[rows_p, lay.cols(t, "vm")] = -dvm.real[:, ns]
        J[rows_q, lay.cols(t, "gq")] = m.m_g
        J[rows_q, lay.cols(t, "va")] = -dva.imag[:, ns]
        J[rows_q, lay.cols(t, "vm")] = -dvm.imag[:, ns]
        J[rows_s, lay.cols(t, "soc")] = np.eye(B) / k
        J[rows_s, lay.cols(t, "ch")] = -np.diag(bess.eta_ch)
        J[rows_s, lay.cols(t, "dis")] = np.diag(1 / bess.eta_dis)
        if t > 0:
            J[rows_s, lay.cols(t - 1, "soc")] = -np.eye(B) / k
    return h.ravel(), J


def _constraint_curvature(lay: _Layout, z, w) -> np.ndarray:
    """Hessian of w^T h(z); only the voltage blocks are nonlinear."""
    c, p = lay.case, lay.split(z)
    N, B = c.n_bus, c.n_bess
    v = lay.voltages(p)
    W = w.reshape(lay.T, 2 * N + B)
    H = np.zeros((lay.n, lay.n))
    ns = lay.ns
    for t in range(lay.T):
        gp = d2S_dV2(v[t], c.Y, W[t, :N])
        gq = d2S_dV2(v[t], c.Y, W[t, N:2 * N])
        blk = -(np.block([[gp[0], gp[1]], [gp[2], gp[3]]]).real + np.block([[gq[0], gq[1]], [gq[2], gq[3]]]).imag)
        idx = np.concatenate([ns, N + ns])
        cols = np.r_[lay.cols(t, "va"), lay.cols(t, "vm")]
        H[np.ix_(cols, cols)] = blk[np.ix_(idx, idx)]
    return H


class _AugmentedLagrangian:
    def __init__(self, lay, prob, lam, rho):
        self.lay, self.prob, self.lam, self.rho = lay, prob, lam, rho
        self.hf = _objective_hess_diag(lay)

    def value(self, z) -> float:
        f, _ = _objective(self.lay, z)
        h, _ = _constraints(self.lay, self.prob, z, jac=False)
        return f + self.lam @ h + 0.5 * self.rho * h @ h

    def derivatives(self, z):
        f, gf = _objective(self.lay, z)
        h, J = _constraints(self.lay, self.prob, z)
        w = self.lam + self.rho * h
        H = self.rho * J.T @ J + _constraint_curvature(self.lay, z, w)
        H[np.diag_indices_from(H)] += self.hf
        return f + self.lam @ h + 0.5 * self.rho * h @ h, gf + J.T @ w, H


def _factor(H: np.ndarray):
    """Cholesky of H + shift*I with the smallest tried shift that makes it positive definite."""
    scale = max(1.0, float(np.abs(np.diag(H)).max(initial=1.0)))
    shift = 0.0
    while True:
        try:
            return cho_factor(H + shift * np.eye(len(H)))
        except np.linalg.LinAlgError:
            shift = max(2 * shift, 1e-10 * scale)


def _projected_newton(al: _AugmentedLagrangian, z, lo, hi, tol: float, max_iter: int):
    """Bertsekas-style projected Newton: Newton step on the free set, gradient step on the binding set."""
    for _ in range(max_iter):
        val, g, H = al.derivatives(z)
        pg = np.clip(z - g, lo, hi) - z
        gap = float(np.max(np.abs(pg), initial=0.0))
        if gap <= tol:
            break
        eps = min(1e-3, gap)
        binding = ((z <= lo + eps) & (g > 0)) | ((z >= hi - eps) & (g < 0))
        free = ~binding
        d = -g.copy()
        if free.any():
            d[free] = -cho_solve(_factor(H[np.ix_(free, free)]), g[free])
        step = 1.0
        # near the solution the predicted decrease falls below the rounding error of the value
        noise = 64 * np.finfo(float).eps * max(1.0, abs(val))
        while step > 1e-14:
            zn = np.clip(z + step * d, lo, hi)
            if al.value(zn) <= val + 1e-4 * g @ (zn - z) + noise:
                break
            step *= 0.5
        else:
            break
        z = zn
    return z


def _kkt(lay, prob, z, lam, lo, hi) -> dict[str, float]:
    _, gf = _objective(lay, z)
    h, J = _constraints(lay, prob, z)
    grad = gf + J.T @ lam
    proj = np.clip(z - grad, lo, hi) - z
    # bound multipliers implied by the Lagrangian gradient
    nu_lo = np.maximum(grad, 0)
    nu_hi = np.maximum(-grad, 0)
    comp = np.max(nu_lo * (z - lo) + nu_hi * (hi - z), initial=0.0)
    return {"stationarity": float(np.max(np.abs(proj), initial=0.0)),
            "primal": float(np.max(np.abs(h), initial=0.0)),
            "complementarity": float(comp)}


def _check_feasible_bounds(prob: OracleProblem) -> None:
    c = prob.case
    if np.any(c.gen_p_min > c.gen_p_max) or np.any(c.gen_q_min > c.gen_q_max) or np.any(c.v_min > c.v_max):
        raise Infeasible("bound inversion in case data")
    if np.any(prob.soc0 < c.bess.soc_min - 1e-12) or np.any(prob.soc0 > c.bess.soc_max + 1e-12):
        raise Infeasible("initial SOC outside [soc_min, soc_max]")
    cap = c.gen_p_max.sum() + c.bess.p_dis_rated.sum()
    floor = c.gen_p_min.sum() - c.bess.p_ch_rated.sum()
    for t in range(prob.horizon):
        total = prob.d_p[t].sum()
        if total > cap:
            raise Infeasible(f"step {t}: demand {total:.4g} exceeds generation plus discharge capacity {cap:.4g}")
        if total < floor - 1e-9 and np.all(c.Y == 0):
            raise Infeasible(f"step {t}: demand {total:.4g} below minimum generation {floor:.4g}")


def _initial_point(lay: _Layout, prob: OracleProblem, rng: np.random.Generator | None) -> np.ndarray:
    c = lay.case
    z = np.zeros((lay.T, lay.nv))
    if rng is None:
        z[:, lay.sl["gp"]] = (c.gen_p_min + c.gen_p_max) / 2
        z[:, lay.sl["gq"]] = (c.gen_q_min + c.gen_q_max) / 2
        z[:, lay.sl["vm"]] = np.clip(1.0, c.v_min[lay.ns], c.v_max[lay.ns])
        z[:, lay.sl["soc"]] = prob.soc0
        return z.ravel()
    lo, hi = lay.bounds()
    z = rng.uniform(lo, hi).reshape(lay.T, lay.nv)
    z[:, lay.sl["va"]] = rng.normal(0, 0.05, size=z[:, lay.sl["va"]].shape)
    return z.ravel()


def _solve_once(lay, prob, z0, opts: OracleOptions):
    lo, hi = lay.bounds()
    z = np.clip(z0, lo, hi)
    lam = np.zeros(lay.T * (2 * lay.case.n_bus + lay.case.n_bess))
    rho = opts.rho0
    prev_primal = np.inf
    history = []
    kkt = None
    it = 0
    for it in range(1, opts.max_outer + 1):
        z = _projected_newton(_AugmentedLagrangian(lay, prob, lam, rho), z, lo, hi,
                              0.1 * opts.tol, opts.max_inner)
        h, _ = _constraints(lay, prob, z, jac=False)
        lam = lam + rho * h
        kkt = _kkt(lay, prob, z, lam, lo, hi)
        history.append(kkt["primal"])
        if max(kkt.values()) <= opts.tol:
            return z, lam, kkt, True, it, history
        if kkt["primal"] > opts.tol and kkt["primal"] > 0.25 * prev_primal:
            rho = min(rho * 10, opts.rho_max)
        prev_primal = kkt["primal"]
    return z, lam, kkt, False, it, history


def solve_multiperiod(prob: OracleProblem, options: OracleOptions | None = None) -> OracleResult:
    """Best local optimum over a deterministic start plus ``options.restarts`` random starts."""
    opts = options or OracleOptions()
    _check_feasible_bounds(prob)
    lay = _Layout(prob.case, prob.horizon)
    rng = np.random.default_rng(opts.seed)
    best = None
    for r in range(opts.restarts + 1):
        z0 = _initial_point(lay, prob, None if r == 0 else rng)
        z, lam, kkt, ok, it, hist = _solve_once(lay, prob, z0, opts)
        f, _ = _objective(lay, z)
        key = (not ok, f if ok else kkt["primal"])
        if best is None or key < best[0]:
            best = (key, z, kkt, ok, it, hist, f)
    _, z, kkt, ok, it, hist, f = best
    p = lay.split(z)
    actions = [PhysicalAction(p["gp"][t].copy(), p["gq"][t].copy(), p["ch"][t].copy(), p["dis"][t].copy())
               for t in range(lay.T)]
    result = OracleResult(actions, lay.voltages(p), p["soc"].copy(), f, kkt, ok, it, hist)
    if not ok and opts.strict:
        raise MaxIterations(f"oracle stopped after {it} outer iterations (kkt {kkt})", result)
    return result


def solve_episode(case: GridCase, scenario: Scenario, soc0, horizon: int, n_steps: int,
                  start: int = 0, options: OracleOptions | None = None):
    """Consecutive horizon-length blocks over [start, start + n_steps), SOC carried across blocks.

    Returns (per-step rewards, list of block results).
    """
    opts = options or OracleOptions()
    soc = np.asarray(soc0, dtype=float)
    rewards, blocks = [], []
    t = start
    end = start + n_steps
    while t < end:
        T = min(horizon, end - t)
        prob = OracleProblem(case, scenario.d_p[t:t + T], scenario.d_q[t:t + T], soc)
        try:
            res = solve_multiperiod(prob, opts)
        except MaxIterations as exc:
            res = exc.result
        blocks.append(res)
        rewards.extend(reward(a, case) for a in res.actions)
        soc = np.clip(res.soc[-1], case.bess.soc_min, case.bess.soc_max)
        t += T
    return np.array(rewards), blocks


def optimal_gap(policy_rewards, oracle_rewards, eps: float = 1e-9) -> float:
    """Mean over episodes of (oracle - policy) / |oracle| * 100."""
    pol = np.atleast_1d(np.asarray(policy_rewards, dtype=float))
    orc = np.atleast_1d(np.asarray(oracle_rewards, dtype=float))
    if pol.shape != orc.shape:
        raise ValueError("policy and oracle reward arrays must align")
    if np.any(np.abs(orc) < eps):
        raise ZeroDivisionError("oracle reward is numerically zero; the relative gap is undefined")
    return float(np.mean((orc - pol) / np.abs(orc)) * 100)
