"""Dual variables of the augmented Lagrangian and their ascent step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..grid import GridCase
from .config import EQUALITY, FAMILIES, INEQUALITY, TrainerConfig


def family_shapes(case: GridCase, horizon: int) -> dict[str, tuple]:
    N, B, T = case.n_bus, case.n_bess, horizon
    return {
        "p_balance": (T, N), "q_balance": (T, N), "soc": (1, B), "v_tie": (T, N),
        "soc_max": (T, B), "soc_min": (T, B), "v_max": (T, N), "v_min": (T, N),
    }


@dataclass
class DualState:
    lam: dict[str, np.ndarray]
    mu: dict[str, np.ndarray]
    alpha: dict[str, np.ndarray]  # per family, one coefficient per horizon offset
    step: dict[str, np.ndarray]
    updates: int = 0
    last_r_lambda: float | None = field(default=None, repr=False)

    @classmethod
    def zeros(cls, case: GridCase, cfg: TrainerConfig) -> "DualState":
        shapes = family_shapes(case, cfg.horizon)
        a = cfg.per_family("alpha")
        s = cfg.per_family("dual_step")
        return cls(
            lam={f: np.zeros(shapes[f]) for f in EQUALITY},
            mu={f: np.zeros(shapes[f]) for f in INEQUALITY},
            alpha={f: np.full(shapes[f][0], a[f]) for f in FAMILIES},
            step={f: np.full(shapes[f][0], s[f]) for f in FAMILIES},
        )

    def copy(self) -> "DualState":
        return DualState(
            lam={k: v.copy() for k, v in self.lam.items()},
            mu={k: v.copy() for k, v in self.mu.items()},
            alpha={k: v.copy() for k, v in self.alpha.items()},
            step={k: v.copy() for k, v in self.step.items()},
            updates=self.updates,
            last_r_lambda=self.last_r_lambda,
        )

    def set_zero(self) -> None:
        for d in (self.lam, self.mu, self.alpha):
            for v in d.values():
                v[...] = 0.0


def dual_update(duals: DualState, eq_mean: dict, ineq_mean: dict, growth: bool = False,
                r_lambda: float | None = None) -> DualState:
    """lambda += step * r_eq;  mu += step * [r_ineq]_+, with mu kept nonnegative.

    ``ineq_mean`` must already be batch means of rectified residuals.
    With ``growth`` the penalty coefficients grow by 1.5 (capped at 100) whenever
    the equality residual norm failed to shrink since the previous update.
    """
    new = duals.copy()
    for f in EQUALITY:
        new.lam[f] = duals.lam[f] + duals.step[f][:, None] * eq_mean[f]
    for f in INEQUALITY:
        new.mu[f] = np.maximum(duals.mu[f] + duals.step[f][:, None] * np.maximum(ineq_mean[f], 0.0), 0.0)
    if growth and r_lambda is not None and duals.last_r_lambda is not None and r_lambda > 0.9 * duals.last_r_lambda:
        for f in FAMILIES:
            new.alpha[f] = np.minimum(duals.alpha[f] * 1.5, 100.0)
    new.last_r_lambda = r_lambda
    new.updates = duals.updates + 1
    return new


def v_proxy(duals: DualState, ref: DualState) -> float:
    """(1/alpha) ||lambda - lambda_ref||^2 + (1/alpha) ||mu - mu_ref||^2 summed over families."""
    total = 0.0
    for f in EQUALITY:
        total += float(np.sum((duals.lam[f] - ref.lam[f]) ** 2 / _safe(ref.step[f])[:, None]))
    for f in INEQUALITY:
        total += float(np.sum((duals.mu[f] - ref.mu[f]) ** 2 / _safe(ref.step[f])[:, None]))
    return total


def _safe(a: np.ndarray) -> np.ndarray:
    return np.where(a > 0, a, np.inf)
