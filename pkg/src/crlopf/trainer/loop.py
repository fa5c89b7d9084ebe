"""Primal-dual actor-critic training loop and its baseline variants."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .. import autodiff as ad
from ..env import GridEnv, ScenarioConfig, constraint_violation
from ..grid import GridCase
from ..nets import ActorNet, CriticNet, NetConfig, PredictorNet, clipped_target, critic_state_vector, soft_update
from .buffer import ReplayBuffer
from .config import EQUALITY, INEQUALITY, TrainerConfig
from .duals import DualState, dual_update, v_proxy
from .residuals import batch_means, constraint_residuals, residual_norms

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "reward", "critic_loss_1", "critic_loss_2", "actor_loss", "r_lambda_norm",
                  "r_mu_norm", "V_proxy", "feasible_vm", "feasible_slack")


@dataclass
class Agent:
    case: GridCase
    actor: ActorNet
    predictor: PredictorNet
    critics: tuple[CriticNet, CriticNet]
    targets: tuple[CriticNet, CriticNet]
    opt_actor: ad.Adam
    opt_critics: tuple[ad.Adam, ad.Adam]

    @classmethod
    def build(cls, case: GridCase, net_cfg: NetConfig, cfg: TrainerConfig) -> "Agent":
        s = cfg.seed
        actor = ActorNet(case, net_cfg, seed=s * 7 + 1)
        predictor = PredictorNet(case, net_cfg, seed=s * 7 + 2)
        c1, c2 = CriticNet(case, net_cfg, seed=s * 7 + 3), CriticNet(case, net_cfg, seed=s * 7 + 4)
        # actor and predictor share one optimizer over the union of their parameters
        joint = {**actor.params, **predictor.params}
        return cls(case, actor, predictor, (c1, c2), (c1.copy(), c2.copy()),
                   ad.Adam(joint, lr=cfg.lr), (ad.Adam(c1.params, lr=cfg.lr), ad.Adam(c2.params, lr=cfg.lr)))


@dataclass
class TrainedArtifacts:
    agent: Agent
    duals: DualState
    metrics: list[dict]
    dual_history: list[dict] = field(default_factory=list)
    config: TrainerConfig | None = None
    # (|r_lambda|, |r_mu|) of the final networks on a fresh replay batch
    final_residuals: tuple[float, float] | None = None


def critic_update(agent: Agent, batch: dict, cfg: TrainerConfig, rng: np.random.Generator | None = None):
    """One Adam step per critic on (y - Q)^2 with the clipped double-Q target."""
    case = agent.case
    sv_prev = critic_state_vector(batch["feat_prev"], case)
    sv_next = critic_state_vector(batch["feat_next"], case)
    with ad.no_grad():
        nxt = agent.actor(batch["feat_next"]).data
        if cfg.target_noise > 0 and rng is not None:
            eps = np.clip(rng.normal(0, cfg.target_noise, nxt.shape), -cfg.target_noise_clip, cfg.target_noise_clip)
            nxt = np.clip(nxt + eps, 0.0, 1.0)
        q1 = agent.targets[0](sv_next, nxt).data
        q2 = agent.targets[1](sv_next, nxt).data
    y = clipped_target(batch["reward"], cfg.gamma, q1, q2, batch["not_done"])
    losses = []
    for critic, opt in zip(agent.critics, agent.opt_critics):
        opt.zero_grad()
        q = critic(sv_prev, batch["block"])
        loss = ad.mean(ad.square_norm(q - y))
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
    return losses


def predictor_future(agent: Agent, batch: dict) -> np.ndarray:
    """Detached predictor rollout on x_t, used as the tie target for later offsets."""
    with ad.no_grad():
        return agent.predictor(batch["feat_next"]).data


def actor_loss(agent: Agent, batch: dict, duals: DualState, kind: str = "crl"):
    """Augmented Lagrangian of the batch; returns (loss, eq residuals, ineq residuals).

    dc3 keeps only the squared penalties and ignores the multipliers; td3_unconstrained
    and penalty use the bare -Q term.
    """
    case = agent.case
    x = batch["feat_prev"]
    block = agent.actor(x)
    q = agent.critics[0](critic_state_vector(x, case), block)
    loss = -ad.mean(q)
    vmag, vp = agent.predictor.forward(x)
    eq, ineq = constraint_residuals(block, vmag, vp, batch, case, predictor_future(agent, batch))
    if kind in ("crl", "dc3"):
        n = block.shape[0]
        lam = duals.lam if kind == "crl" else {f: np.zeros_like(v) for f, v in duals.lam.items()}
        mu = duals.mu if kind == "crl" else {f: np.zeros_like(v) for f, v in duals.mu.items()}
        for f in EQUALITY:
            r = eq[f]
            a = duals.alpha[f][:, None]
            lam_term = ad.tsum(r * lam[f]) * (1.0 / n)
            quad = ad.tsum(ad.square_norm(r) * (a / 2)) * (1.0 / n)
            loss = loss + lam_term + quad
        for f in INEQUALITY:
            rp = ad.relu_plus(ineq[f])
            a = duals.alpha[f][:, None]
            mu_term = ad.tsum(rp * mu[f]) * (1.0 / n)
            quad = ad.tsum(ad.square_norm(rp) * (a / 2)) * (1.0 / n)
            loss = loss + mu_term + quad
    return loss, eq, ineq


def _episode_seed(cfg: TrainerConfig, k: int) -> int:
    return cfg.seed * 100_003 + k


def train(case: GridCase, cfg: TrainerConfig, net_cfg: NetConfig | None = None,
          scenario_cfg: ScenarioConfig | None = None, progress: int = 0) -> TrainedArtifacts:
    net_cfg = net_cfg or NetConfig(horizon=cfg.horizon)
    if net_cfg.horizon != cfg.horizon:
        raise ValueError("network horizon must equal the trainer horizon")
    scenario_cfg = scenario_cfg or ScenarioConfig()
    agent = Agent.build(case, net_cfg, cfg)
    duals = DualState.zeros(case, cfg)
    if cfg.kind in ("td3_unconstrained", "penalty"):
        duals.set_zero()
    rng = np.random.default_rng(cfg.seed)
    noise_rng = np.random.default_rng(cfg.seed + 1)
    buf = ReplayBuffer(cfg.buffer_size, case, cfg.horizon, seed=cfg.seed + 2)
    env = GridEnv(case, cfg.horizon, scenario_cfg, r_fail=cfg.r_fail)
    episode = 0
    state = env.reset(_episode_seed(cfg, episode))

    metrics: list[dict] = []
    snapshots = [duals.copy()]
    dual_history: list[dict] = []
    c_loss = [np.nan, np.nan]
    a_loss = np.nan
    r_l = r_m = np.nan
    A = case.action_dim
    for step in range(cfg.max_iterations):
        if step < cfg.exploration_steps:
            block = rng.uniform(size=(cfg.horizon, A))
        else:
            block = agent.actor.act(state)
            if cfg.explore_noise > 0:
                block = np.clip(block + noise_rng.normal(0, cfg.explore_noise, block.shape), 0.0, 1.0)
        t = state.t
        d_p, d_q = env.demand_window(t)
        nxt, r, info = env.step(block)
        stored_r = r
        if cfg.kind == "penalty":
            stored_r = r - cfg.penalty_beta * constraint_violation(info, case)
        buf.add(feat_prev=state.features(), feat_next=nxt.features(), block=block, reward=stored_r,
                not_done=0.0 if info["failed"] else 1.0, soc_prev=state.soc[case.bess_buses],
                soc_next=nxt.soc[case.bess_buses], vm_next=np.abs(nxt.v), d_p=d_p, d_q=d_q, t=step)
        if info["done"]:
            episode += 1
            state = env.reset(_episode_seed(cfg, episode))
        else:
            state = nxt

        if len(buf) >= cfg.batch_size:
            batch = buf.sample(cfg.batch_size)
            c_loss = critic_update(agent, batch, cfg, noise_rng)
            if step % cfg.policy_delay == 0:
                agent.opt_actor.zero_grad()
                loss, eq, ineq = actor_loss(agent, batch, duals, cfg.kind)
                loss.backward()
                agent.opt_actor.step()
                a_loss = float(loss.data)
                r_l, r_m = residual_norms(*batch_means(eq, ineq))
                for tgt, crit in zip(agent.targets, agent.critics):
                    soft_update(tgt, crit, cfg.tau)
            if cfg.kind == "crl" and (step + 1) % cfg.dual_period == 0:
                dbatch = buf.sample(cfg.batch_size)
                with ad.no_grad():
                    _, eq, ineq = actor_loss(agent, dbatch, duals, cfg.kind)
                eq_m, in_m = batch_means(eq, ineq)
                norm_l, norm_m = residual_norms(eq_m, in_m)
                duals = dual_update(duals, eq_m, in_m, growth=cfg.alpha_growth, r_lambda=norm_l)
                dual_history.append({"step": step, "r_lambda_norm": norm_l, "r_mu_norm": norm_m})
                log.info("dual update %d at step %d: |r_lam|=%.4g |r_mu|=%.4g", duals.updates, step, norm_l, norm_m)
                snapshots.append(duals.copy())

        metrics.append({
            "step": step, "reward": float(r), "critic_loss_1": c_loss[0], "critic_loss_2": c_loss[1],
            "actor_loss": a_loss, "r_lambda_norm": r_l, "r_mu_norm": r_m, "V_proxy": len(snapshots) - 1,
            "feasible_vm": int(info["feasible_vm"]), "feasible_slack": int(info["feasible_slack"]),
        })
        if progress and (step + 1) % progress == 0:
            recent = metrics[-progress:]
            log.info("step %d reward %.3f feas_vm %.2f feas_slack %.2f |r_lam| %.4g", step + 1,
                     np.mean([m["reward"] for m in recent]), np.mean([m["feasible_vm"] for m in recent]),
                     np.mean([m["feasible_slack"] for m in recent]), r_l)

    # V_proxy is measured against the final duals, which stand in for the unknown saddle point
    ref = snapshots[-1]
    vals = [v_proxy(s, ref) for s in snapshots]
    for m in metrics:
        m["V_proxy"] = vals[m["V_proxy"]]
    final = None
    if len(buf) >= cfg.batch_size:
        with ad.no_grad():
            _, eq, ineq = actor_loss(agent, buf.sample(cfg.batch_size), duals, cfg.kind)
        final = residual_norms(*batch_means(eq, ineq))
    return TrainedArtifacts(agent, duals, metrics, dual_history, cfg, final)


def baseline_trainer(kind: str, case: GridCase, cfg: TrainerConfig, **kw) -> TrainedArtifacts:
    return train(case, replace(cfg, kind=kind), **kw)
