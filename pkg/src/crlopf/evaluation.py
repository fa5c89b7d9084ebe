"""Held-out rollouts of frozen policies: feasibility rates, rewards and the gap to the oracle."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .env import EnvState, Scenario, ScenarioConfig, env_step, generate_scenario, initial_state, normalize
from .grid import GridCase
from .oracle import MaxIterations, OracleOptions, OracleProblem, optimal_gap, solve_episode, solve_multiperiod

Policy = Callable[[EnvState], np.ndarray]
PolicyFactory = Callable[[Scenario], Policy]

ROW_COLUMNS = ("episode", "seed", "t", "reward", "feasible_vm", "feasible_slack", "failed")


@dataclass
class EvalReport:
    n_samples: int
    feasible_vm_rate: float
    feasible_slack_rate: float
    mean_reward: float
    episode_rewards: list[float]  # per-episode mean reward per step
    failures: int
    gap: float | None = None
    oracle_episode_rewards: list[float] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)

    @property
    def episode_reward_std(self) -> float:
        return float(np.std(self.episode_rewards))

    def summary(self) -> dict:
        return {"n_samples": self.n_samples, "feasible_vm_rate": self.feasible_vm_rate,
                "feasible_slack_rate": self.feasible_slack_rate, "mean_reward": self.mean_reward,
                "episode_reward_std": self.episode_reward_std, "failures": self.failures,
                "gap_percent": self.gap}


def random_policy(case: GridCase, horizon: int, seed: int = 0) -> Policy:
    rng = np.random.default_rng(seed)
    return lambda state: rng.uniform(size=(horizon, case.action_dim))


def actor_policy(actor) -> Policy:
    return actor.act


def episode_plan(n_steps: int, episode_len: int, seed: int) -> list[tuple[int, int]]:
    """(scenario seed, steps) pairs covering ``n_steps`` with consecutive episodes."""
    plan, left, k = [], n_steps, 0
    while left > 0:
        plan.append((seed + k, min(left, episode_len)))
        left -= episode_len
        k += 1
    return plan


def _run_episode(case, make_policy, scen_cfg, seed, steps, horizon, r_fail, soc0):
    scenario = generate_scenario(case, scen_cfg, seed)
    policy = make_policy(scenario)
    state = initial_state(case, scenario, horizon, soc0)
    rows = []
    for _ in range(steps):
        state_next, r, info = env_step(state, policy(state), scenario, case, r_fail)
        rows.append({"seed": seed, "t": state.t, "reward": float(r), "feasible_vm": int(info["feasible_vm"]),
                     "feasible_slack": int(info["feasible_slack"]), "failed": int(info["failed"])})
        if info["failed"]:
            break
        state = state_next
    return scenario, rows


def _lookahead_cfg(cfg: ScenarioConfig, horizon: int) -> ScenarioConfig:
    return cfg if cfg.lookahead >= horizon else replace(cfg, lookahead=horizon)


def oracle_replay_policy(case: GridCase, scenario, horizon: int,
                         options: OracleOptions | None = None) -> Policy:
    """Policy that plays the oracle plan of consecutive blocks, normalized for the environment."""
    opts = options or OracleOptions(strict=False)
    plan: dict[int, np.ndarray] = {}

    def policy(state: EnvState) -> np.ndarray:
        t = state.t
        if t not in plan:
            prob = OracleProblem(case, scenario.d_p[t:t + horizon], scenario.d_q[t:t + horizon],
                                 state.soc[case.bess_buses])
            try:
                res = solve_multiperiod(prob, opts)
            except MaxIterations as exc:
                res = exc.result
            for k, a in enumerate(res.actions):
                plan[t + k] = normalize(a, case)
        return np.tile(plan[t], (horizon, 1))

    return policy


def oracle_replay_factory(case: GridCase, horizon: int, options: OracleOptions | None = None) -> PolicyFactory:
    return lambda scenario: oracle_replay_policy(case, scenario, horizon, options)


def evaluate(case: GridCase, policy: Policy | None, scenario_cfg: ScenarioConfig, n_steps: int, horizon: int,
             seed: int = 10_000, r_fail: float = -100.0, soc0=None, oracle: OracleOptions | None = None,
             threads: int = 1, policy_factory: PolicyFactory | None = None) -> EvalReport:
    """Roll ``policy`` over fresh scenarios for ``n_steps`` steps; optionally compare with the oracle.

    ``policy_factory`` replaces ``policy`` for policies that need the episode's scenario.
    Episodes are independent; with ``threads`` > 1 the oracle solves fan out across
    worker threads and results are merged in seed order.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    if (policy is None) == (policy_factory is None):
        raise ValueError("pass exactly one of policy and policy_factory")
    make_policy = policy_factory or (lambda scenario: policy)
    cfg = _lookahead_cfg(scenario_cfg, horizon)
    soc0 = np.full(case.n_bess, 0.5) if soc0 is None else np.asarray(soc0, dtype=float)
    rows: list[dict] = []
    episodes = []
    for k, (s, steps) in enumerate(episode_plan(n_steps, cfg.episode_len, seed)):
        scenario, ep_rows = _run_episode(case, make_policy, cfg, s, steps, horizon, r_fail, soc0)
        for r in ep_rows:
            r["episode"] = k
        rows.extend(ep_rows)
        episodes.append((scenario, ep_rows))
    rewards = np.array([r["reward"] for r in rows])
    report = EvalReport(
        n_samples=len(rows),
        feasible_vm_rate=float(np.mean([r["feasible_vm"] for r in rows])),
        feasible_slack_rate=float(np.mean([r["feasible_slack"] for r in rows])),
        mean_reward=float(rewards.mean()),
        episode_rewards=[float(np.mean([r["reward"] for r in ep])) for _, ep in episodes],
        failures=int(sum(r["failed"] for r in rows)),
        rows=[{c: r[c] for c in ROW_COLUMNS} for r in rows],
    )
    if oracle is not None:
        def solve(item):
            scenario, ep = item
            return solve_episode(case, scenario, soc0, horizon, len(ep), options=oracle)[0]

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                oracle_rewards = list(pool.map(solve, episodes))
        else:
            oracle_rewards = [solve(e) for e in episodes]
        pol = [sum(r["reward"] for r in ep) for _, ep in episodes]
        orc = [sum(o) for o in oracle_rewards]
        report.oracle_episode_rewards = [float(np.mean(o)) for o in oracle_rewards]
        report.gap = optimal_gap(pol, orc)
    return report
