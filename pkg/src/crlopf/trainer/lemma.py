"""Dual-ascent monitor: V^k = (1/a_l)||lam - lam*||^2 + (1/a_m)||mu - mu*||^2 and its decrease bound.

The convex toy problems are quadratic programs whose augmented Lagrangian
    f(z) + lam'(Lz - b) + mu'[Kz - c]_+ + a_l/2 ||Lz - b||^2 + a_m/2 ||[Kz - c]_+||^2
is minimized exactly by enumerating, for each inequality, whether it is strictly
inactive, strictly active or sitting on its kink.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadToy:
    P: np.ndarray  # objective 0.5 z'Pz + q'z, P positive definite
    q: np.ndarray
    L: np.ndarray
    b: np.ndarray
    K: np.ndarray
    c: np.ndarray
    lam_star: np.ndarray
    mu_star: np.ndarray


def toy_equality() -> QuadToy:
    """min x^2 s.t. x = 1; stationarity 2x + lam = 0 gives lam* = -2."""
    return QuadToy(P=np.array([[2.0]]), q=np.zeros(1), L=np.array([[1.0]]), b=np.array([1.0]),
                   K=np.zeros((0, 1)), c=np.zeros(0), lam_star=np.array([-2.0]), mu_star=np.zeros(0))


def toy_mixed() -> QuadToy:
    """min (x-3)^2 + (y-1)^2 s.t. x - y = 0, x + y <= 2; saddle at x = y = 1, lam* = mu* = 2."""
    return QuadToy(P=2 * np.eye(2), q=np.array([-6.0, -2.0]), L=np.array([[1.0, -1.0]]), b=np.zeros(1),
                   K=np.array([[1.0, 1.0]]), c=np.array([2.0]), lam_star=np.array([2.0]), mu_star=np.array([2.0]))


def augmented_value(toy: QuadToy, z, lam, mu, a_l, a_m) -> float:
    h = toy.L @ z - toy.b
    g = np.maximum(toy.K @ z - toy.c, 0)
    return float(0.5 * z @ toy.P @ z + toy.q @ z + lam @ h + mu @ g + a_l / 2 * h @ h + a_m / 2 * g @ g)


def primal_minimizer(toy: QuadToy, lam, mu, a_l: float, a_m: float, tol: float = 1e-12) -> np.ndarray:
    n, m = toy.P.shape[0], toy.K.shape[0]
    H0 = toy.P + a_l * toy.L.T @ toy.L
    g0 = toy.q + toy.L.T @ lam - a_l * toy.L.T @ toy.b
    best, best_val = None, np.inf
    for states in itertools.product((-1, 0, 1), repeat=m):
        H, g = H0.copy(), g0.copy()
        on = [i for i, s in enumerate(states) if s == 0]
        for i, s in enumerate(states):
            if s == 1:
                Ki = toy.K[i]
                H += a_m * np.outer(Ki, Ki)
                g += (mu[i] - a_m * toy.c[i]) * Ki
        E = toy.K[on]
        kkt = np.block([[H, E.T], [E, np.zeros((len(on), len(on)))]])
        rhs = np.concatenate([-g, toy.c[on]])
        try:
            z = np.linalg.solve(kkt, rhs)[:n]
        except np.linalg.LinAlgError:
            continue
        slack = toy.K @ z - toy.c
        ok = all((s == -1 and slack[i] <= tol) or (s == 1 and slack[i] >= -tol) or s == 0
                 for i, s in enumerate(states))
        if not ok:
            continue
        val = augmented_value(toy, z, lam, mu, a_l, a_m)
        if val < best_val - 1e-15:
            best, best_val = z, val
    return best


def run_dual_ascent(toy: QuadToy, iters: int, a_l: float = 1.0, a_m: float = 1.0,
                    lam0=None, mu0=None) -> dict[str, np.ndarray]:
    """Exact primal step followed by lam += a_l r_lam, mu += a_m [Kz - c]_+."""
    lam = np.zeros(len(toy.b)) if lam0 is None else np.array(lam0, dtype=float)
    mu = np.zeros(len(toy.c)) if mu0 is None else np.array(mu0, dtype=float)
    hist = {"lam": [lam.copy()], "mu": [mu.copy()], "r_lam": [], "r_mu": [], "z": []}
    for _ in range(iters):
        z = primal_minimizer(toy, lam, mu, a_l, a_m)
        r_l = toy.L @ z - toy.b
        r_m = np.maximum(toy.K @ z - toy.c, 0)
        lam = lam + a_l * r_l
        mu = np.maximum(mu + a_m * r_m, 0)
        for k, v in (("lam", lam), ("mu", mu), ("r_lam", r_l), ("r_mu", r_m), ("z", z)):
            hist[k].append(v.copy())
    return {k: np.array(v) for k, v in hist.items()}


def lemma1_monitor(lam_hist, mu_hist, lam_star, mu_star, a_l: float, a_m: float) -> np.ndarray:
    lam_hist = np.asarray(lam_hist, dtype=float)
    mu_hist = np.asarray(mu_hist, dtype=float)
    dl = lam_hist - lam_star
    dm = mu_hist - mu_star
    return (dl.reshape(len(dl), -1) ** 2).sum(axis=1) / a_l + (dm.reshape(len(dm), -1) ** 2).sum(axis=1) / a_m


def decrease_slack(V: np.ndarray, r_lam, r_mu, a_l: float, a_m: float) -> np.ndarray:
    """(V^k - a_l||r^{k+1}_lam||^2 - a_m||r^{k+1}_mu||^2) - V^{k+1}; nonnegative when the bound holds."""
    r_lam = np.asarray(r_lam).reshape(len(V) - 1, -1)
    r_mu = np.asarray(r_mu).reshape(len(V) - 1, -1)
    bound = V[:-1] - a_l * (r_lam ** 2).sum(axis=1) - a_m * (r_mu ** 2).sum(axis=1)
    return bound - V[1:]
