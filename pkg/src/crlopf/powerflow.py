"""AC power-flow evaluation and Newton-Raphson solve in polar coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridCase


class PowerFlowError(RuntimeError):
    pass


class NonConvergence(PowerFlowError):
    def __init__(self, message: str, v: np.ndarray, mismatch: float, iterations: int):
        super().__init__(message)
        self.v = v
        self.mismatch = mismatch
        self.iterations = iterations


class SingularJacobian(PowerFlowError):
    pass


@dataclass
class PowerFlowSpec:
    """Nodal schedules and bus classification for one solve.

    ``p_sched``/``q_sched`` are net injections (generation + discharge - charge - demand).
    Slack entries are ignored by the solver. PV buses hold ``vm_set`` magnitudes.
    """

    p_sched: np.ndarray
    q_sched: np.ndarray
    slack: int
    pv: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    vm_set: np.ndarray | None = None  # length N; read at slack and PV buses
    slack_va: float = 0.0

    def __post_init__(self):
        n = len(self.p_sched)
        self.pv = np.asarray(self.pv, dtype=int)
        if self.slack in set(self.pv.tolist()):
            raise ValueError("slack bus cannot also be PV")
        if len(set(self.pv.tolist())) != len(self.pv):
            raise ValueError("duplicate PV bus")
        if self.vm_set is None:
            self.vm_set = np.ones(n)

    @property
    def pq(self) -> np.ndarray:
        n = len(self.p_sched)
        mask = np.ones(n, dtype=bool)
        mask[self.slack] = False
        mask[self.pv] = False
        return np.flatnonzero(mask)

    @property
    def pvpq(self) -> np.ndarray:
        return np.sort(np.concatenate([self.pv, self.pq]))


@dataclass
class PowerFlowResult:
    v: np.ndarray
    iterations: int
    mismatch_history: list[float]

    @property
    def mismatch(self) -> float:
        return self.mismatch_history[-1]


def complex_injections(v: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """s = v * conj(Y v); the diagonal of v v^H Y^H."""
    v = np.asarray(v)
    return v * np.conj(v @ Y.T)


def pf_residual(v: np.ndarray, Y: np.ndarray, p_sched: np.ndarray, q_sched: np.ndarray):
    """Scheduled minus computed active/reactive injections."""
    s = complex_injections(v, Y)
    return p_sched - s.real, q_sched - s.imag


def nodal_schedule(case: GridCase, g_p, g_q, p_ch, p_dis, d_p, d_q):
    """Net nodal injections for given device setpoints and demands."""
    m = case.maps
    p = m.m_g @ g_p + m.m_b @ (np.asarray(p_dis) - np.asarray(p_ch)) - d_p
    q = m.m_g @ g_q - d_q
    return p, q


def dS_dV(v: np.ndarray, Y: np.ndarray):
    """Partial derivatives of complex injections w.r.t. angle and magnitude."""
    ibus = Y @ v
    vnorm = v / np.abs(v)
    dva = 1j * np.diag(v) @ np.conj(np.diag(ibus) - Y @ np.diag(v))
    dvm = np.diag(v) @ np.conj(Y @ np.diag(vnorm)) + np.conj(np.diag(ibus)) @ np.diag(vnorm)
    return dva, dvm


def d2S_dV2(v: np.ndarray, Y: np.ndarray, lam: np.ndarray):
    """Second derivatives of lam^T s in polar coordinates: (Gaa, Gav, Gva, Gvv).

    For real weights w, Re(.) of the blocks with lam = w is the Hessian of w^T Re(s)
    and Im(.) the Hessian of w^T Im(s).
    """
    lam = np.asarray(lam, dtype=complex)
    ibus = Y @ v
    dv = np.diag(v)
    a = np.diag(lam * v)
    c = a @ np.conj(Y @ dv)
    d = Y.conj().T @ dv
    e = np.diag(np.conj(v)) @ (d @ np.diag(lam) - np.diag(d @ lam))
    f = c - a @ np.diag(np.conj(ibus))
    g = np.diag(1 / np.abs(v))
    gva = 1j * g @ (e - f)
    return e + f, gva.T, gva, g @ (c + c.T) @ g


def _mismatch(v, Y, spec: PowerFlowSpec, pvpq, pq):
    dp, dq = pf_residual(v, Y, spec.p_sched, spec.q_sched)
    # Newton works on computed - scheduled
    return -np.concatenate([dp[pvpq], dq[pq]])


def newton_solve(case_or_Y, spec: PowerFlowSpec, v0: np.ndarray | None = None,
                 tol: float = 1e-8, max_iter: int = 20) -> PowerFlowResult:
    """Full Newton power flow. Raises NonConvergence carrying the best iterate."""
    Y = case_or_Y.Y if isinstance(case_or_Y, GridCase) else np.asarray(case_or_Y)
    n = Y.shape[0]
    pvpq, pq = spec.pvpq, spec.pq
    if v0 is None:
        v0 = np.ones(n, dtype=complex)
    v0 = np.asarray(v0, dtype=complex)
    if not np.all(np.isfinite(v0)):
        raise ValueError("initial guess must be finite")
    vm = np.abs(v0).copy()
    va = np.angle(v0).copy()
    fixed = np.concatenate([[spec.slack], spec.pv]).astype(int)
    vm[fixed] = spec.vm_set[fixed]
    va[spec.slack] = spec.slack_va
    v = vm * np.exp(1j * va)

    npvpq = len(pvpq)
    f = _mismatch(v, Y, spec, pvpq, pq)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    history = [norm]
    best_v, best = v.copy(), norm
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        dva, dvm = dS_dV(v, Y)
        J = np.block([
            [dva[np.ix_(pvpq, pvpq)].real, dvm[np.ix_(pvpq, pq)].real],
            [dva[np.ix_(pq, pvpq)].imag, dvm[np.ix_(pq, pq)].imag],
        ])
        try:
            dx = -np.linalg.solve(J, f)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(f"non-finite Newton step at iteration {it}")
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        f = _mismatch(v, Y, spec, pvpq, pq)
        norm = float(np.max(np.abs(f)))
        history.append(norm)
        if not np.isfinite(norm):
            break
        if norm < best:
            best_v, best = v.copy(), norm
    if not norm <= tol:
        raise NonConvergence(f"Newton did not converge in {it} iterations (mismatch {best:.3e})",
                             best_v, best, it)
    return PowerFlowResult(v=v, iterations=it, mismatch_history=history)


def solve_dispatch(case: GridCase, g_p, g_q, p_ch, p_dis, d_p, d_q, v0=None,
                   tol: float = 1e-8, max_iter: int = 20) -> tuple[PowerFlowResult, complex]:
    """Solve with all non-slack buses PQ; return the result and the slack bus complex power."""
    p, q = nodal_schedule(case, g_p, g_q, p_ch, p_dis, d_p, d_q)
    spec = PowerFlowSpec(p, q, slack=case.slack_bus)
    res = newton_solve(case.Y, spec, v0=v0, tol=tol, max_iter=max_iter)
    s_slack = complex_injections(res.v, case.Y)[case.slack_bus]
    return res, s_slack


def slack_generation(case: GridCase, v: np.ndarray, g_p, g_q, p_ch, p_dis, d_p, d_q):
    """Generation the slack unit must supply so that its bus balances.

    Other devices sharing the slack bus keep their scheduled output.
    """
    s = complex_injections(v, case.Y)[case.slack_bus]
    p_other, q_other = nodal_schedule(case, g_p, g_q, p_ch, p_dis, d_p, d_q)
    k = case.slack_gen
    p_rest = p_other[case.slack_bus] - g_p[k]
    q_rest = q_other[case.slack_bus] - g_q[k]
    return s.real - p_rest, s.imag - q_rest
