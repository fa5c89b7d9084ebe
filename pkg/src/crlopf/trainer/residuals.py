"""Constraint residuals of an action block against the predicted voltages."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..grid import GridCase


def physical_block(block: Tensor, case: GridCase):
    """Differentiable denormalization of a (batch, T, 2G+2B) block."""
    G, B = case.n_gen, case.n_bess
    gp = block[..., :G] * (case.gen_p_max - case.gen_p_min) + case.gen_p_min
    gq = block[..., G:2 * G] * (case.gen_q_max - case.gen_q_min) + case.gen_q_min
    ch = block[..., 2 * G:2 * G + B] * case.bess.p_ch_rated
    dis = block[..., 2 * G + B:] * case.bess.p_dis_rated
    return gp, gq, ch, dis


def constraint_residuals(block, vmag, vp, batch: dict, case: GridCase, vm_future: np.ndarray | None = None):
    """Equality and inequality residuals per horizon offset.

    ``block`` (batch, T, A), ``vmag``/``vp`` (batch, T, N) from the predictor.
    ``batch`` supplies soc_prev, soc_next, vm_next and the demand window d_p/d_q.
    ``vm_future`` (batch, T-1, N) is the tie target for offsets beyond the applied step;
    without it only offset 0 is tied.
    Returns ({family: Tensor}, {family: Tensor}); inequality residuals are not rectified.
    """
    block, vmag, vp = ad.tensor(block), ad.tensor(vmag), ad.tensor(vp)
    T = block.shape[1]
    for k in ("d_p", "d_q"):
        if batch[k].shape[1] < T:
            raise ValueError(f"demand window {k} covers {batch[k].shape[1]} steps, need {T}")
    gp, gq, ch, dis = physical_block(block, case)
    m = case.maps
    s = vp * ad.conj(ad.matmul(vp, case.Y.T))
    p_bal = ad.matmul(gp, m.m_g.T) + ad.matmul(dis - ch, m.m_b.T) - batch["d_p"][:, :T] - ad.real_part(s)
    q_bal = ad.matmul(gq, m.m_g.T) - batch["d_q"][:, :T] - ad.imag_part(s)

    bess = case.bess
    delta = (ch * bess.eta_ch - dis / bess.eta_dis) * bess.dt_over_ecap  # (batch, T, B)
    soc_prev = batch["soc_prev"][:, None, :]
    soc_eq = (batch["soc_next"][:, None, :] - soc_prev) - delta[:, 0:1, :]
    rolled = [soc_prev + delta[:, 0:1, :]]
    for k in range(1, T):
        rolled.append(rolled[-1] + delta[:, k:k + 1, :])
    soc_roll = ad.concat(rolled, axis=1)

    target = batch["vm_next"][:, None, :]
    if vm_future is not None and T > 1:
        target = np.concatenate([target, vm_future[:, :T - 1]], axis=1)
        v_tie = vmag - target
    else:
        v_tie = vmag[:, 0:1, :] - target

    eq = {"p_balance": p_bal, "q_balance": q_bal, "soc": soc_eq, "v_tie": v_tie}
    ineq = {
        "soc_max": soc_roll - bess.soc_max,
        "soc_min": -soc_roll + bess.soc_min,
        "v_max": vmag - case.v_max,
        "v_min": -vmag + case.v_min,
    }
    return eq, ineq


def batch_means(eq: dict, ineq: dict) -> tuple[dict, dict]:
    """Batch-averaged equality residuals and batch-averaged rectified inequality residuals."""
    eq_m = {k: v.data.mean(axis=0) for k, v in eq.items()}
    in_m = {k: np.maximum(v.data, 0).mean(axis=0) for k, v in ineq.items()}
    return eq_m, in_m


def residual_norms(eq_m: dict, in_m: dict) -> tuple[float, float]:
    r_l = np.sqrt(sum(float(np.sum(v ** 2)) for v in eq_m.values()))
    r_m = np.sqrt(sum(float(np.sum(v ** 2)) for v in in_m.values()))
    return r_l, r_m
