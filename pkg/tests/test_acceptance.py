"""Acceptance criteria 1-8. Each test carries an ``acceptance`` marker; conftest prints one line per criterion."""

import csv
import time
from dataclasses import replace

import numpy as np
import pytest

from crlopf.cli import main
from crlopf.env import ScenarioConfig, env_step, generate_scenario, initial_state
from crlopf.gradsuite import run_suite
from crlopf.nets import NetConfig, clipped_target, critic_state_vector
from crlopf.powerflow import PowerFlowSpec, newton_solve, nodal_schedule, pf_residual
from crlopf.trainer import (
    Agent, DualState, TrainerConfig, actor_loss, critic_update, decrease_slack, lemma1_monitor,
    run_dual_ascent, toy_equality, toy_mixed,
)

from test_powerflow import grid_search_two_bus, mid_schedule
from test_trainer import random_batch, random_duals

DESK = "desk_ieee14"
BASELINES = ("penalty", "td3_unconstrained")


def read_summary(path):
    with open(path, newline="") as fh:
        return {k: float(v) for k, v in list(csv.reader(fh))[1:]}


def read_episodes(path):
    with open(path, newline="") as fh:
        return [float(r["mean_reward"]) for r in csv.DictReader(fh)]


# --- 1: power flow ---

@pytest.mark.acceptance("1")
@pytest.mark.parametrize("name", ["ieee14", "ieee30"])
def test_newton_flat_start(name, request):
    case = request.getfixturevalue(name)
    p, q = mid_schedule(case)
    t0 = time.perf_counter()
    res = newton_solve(case, PowerFlowSpec(p, q, slack=case.slack_bus))
    elapsed = time.perf_counter() - t0
    dp, dq = pf_residual(res.v, case.Y, p, q)
    mask = np.arange(case.n_bus) != case.slack_bus
    assert res.iterations <= 10
    assert max(np.abs(dp[mask]).max(), np.abs(dq[mask]).max()) <= 1e-8
    assert elapsed < 1.0


@pytest.mark.acceptance("1")
def test_two_bus_matches_grid_search(two_bus):
    t0 = time.perf_counter()
    res = newton_solve(two_bus, PowerFlowSpec(np.array([0.0, -0.3]), np.array([0.0, -0.1]), slack=0))
    elapsed = time.perf_counter() - t0
    m, a = grid_search_two_bus(-0.3, -0.1, two_bus.Y)
    assert abs(abs(res.v[1]) - m) <= 1e-6
    assert abs(np.angle(res.v[1]) - a) <= 1e-6
    assert elapsed < 1.0


# --- 2: gradients ---

@pytest.mark.acceptance("2")
def test_gradient_suite():
    t0 = time.perf_counter()
    rows = run_suite(instances=20)
    elapsed = time.perf_counter() - t0
    failed = [(r.name, r.max_error) for r in rows if not r.passed]
    assert not failed
    assert {"actor", "predictor"} <= {r.name for r in rows}
    assert all(r.instances >= 20 for r in rows)
    assert elapsed < 30.0


# --- 3: SOC invariant ---

@pytest.mark.acceptance("3")
def test_fuzzed_steps_keep_soc_in_bounds(two_bus):
    # a large step size and a narrow window make overshoot frequent
    bess = replace(two_bus.bess, dt_over_ecap=0.9, soc_min=np.array([0.15]), soc_max=np.array([0.85]))
    case = replace(two_bus, bess=bess)
    rng = np.random.default_rng(2024)
    scen = generate_scenario(case, ScenarioConfig(episode_len=100), 0)
    calls = 0
    while calls < 10_000:
        soc0 = rng.choice([0.15, 0.85, rng.uniform(0.15, 0.85)], size=1)
        state = initial_state(case, scen, 2, soc0=soc0)
        for _ in range(100):
            state, _, info = env_step(state, rng.uniform(size=(2, case.action_dim)), scen, case)
            calls += 1
            soc = state.soc[case.bess_buses]
            assert np.all(soc >= bess.soc_min) and np.all(soc <= bess.soc_max)
    assert calls == 10_000


@pytest.mark.acceptance("3")
@pytest.mark.parametrize("soc0,zeroed", [(1.0, "p_ch"), (0.0, "p_dis")])
def test_clamp_zeroes_power_exactly(two_bus, soc0, zeroed):
    scen = generate_scenario(two_bus, ScenarioConfig(episode_len=4), 0)
    state = initial_state(two_bus, scen, 2, soc0=[soc0])
    _, _, info = env_step(state, np.ones((2, two_bus.action_dim)), scen, two_bus)
    assert getattr(info["applied"], zeroed)[0] == 0.0
    # the other direction still runs, moving SOC away from the bound
    assert 0.0 < info["soc"][0] < 1.0


# --- 4: dual ascent decrease ---

@pytest.mark.acceptance("4")
@pytest.mark.parametrize("toy", [toy_equality(), toy_mixed()], ids=["equality", "mixed"])
def test_dual_ascent_bound(toy):
    a = 1.0
    h = run_dual_ascent(toy, 500, a_l=a, a_m=a)
    V = lemma1_monitor(h["lam"], h["mu"], toy.lam_star, toy.mu_star, a, a)
    assert np.all(np.diff(V) <= 1e-9)
    assert decrease_slack(V, h["r_lam"], h["r_mu"], a, a).min() >= -1e-9
    assert np.abs(h["r_lam"][-1]).max() < 1e-6
    assert np.abs(h["r_mu"][-1]).max(initial=0.0) < 1e-6


# --- 5: critic sanity ---

@pytest.mark.acceptance("5")
def test_bandit_critics_converge(two_bus):
    cfg = TrainerConfig(horizon=2, gamma=0.0)
    agent = Agent.build(two_bus, NetConfig(horizon=2), cfg)
    batch = random_batch(two_bus, np.random.default_rng(5), 32, 2)
    batch["reward"] = np.full(32, -2.3)
    sv = critic_state_vector(batch["feat_prev"], two_bus)
    for _ in range(2000):
        critic_update(agent, batch, cfg)
    for c in agent.critics:
        assert np.abs(c(sv, batch["block"]).data + 2.3).max() <= 1e-3


@pytest.mark.acceptance("5")
@pytest.mark.parametrize("r,gamma,q1,q2,mask", [
    (1.0, 0.99, 2.0, 3.0, 1.0), (-4.0, 0.9, -1.0, -2.0, 1.0), (0.5, 0.5, 7.0, 7.0, 1.0), (2.0, 0.99, 9.0, 1.0, 0.0),
])
def test_clipped_target_hand_formula(r, gamma, q1, q2, mask):
    assert clipped_target(r, gamma, q1, q2, mask) == pytest.approx(r + gamma * mask * min(q1, q2), abs=1e-12)


# --- 7: reductions ---

@pytest.mark.acceptance("7")
def test_dc3_without_penalty_equals_td3_loss(ieee14):
    cfg = TrainerConfig(horizon=4, alpha=0.0)
    agent = Agent.build(ieee14, NetConfig(), cfg)
    batch = random_batch(ieee14, np.random.default_rng(7), 5, 4)
    duals = random_duals(ieee14, cfg, np.random.default_rng(8))
    dc3, _, _ = actor_loss(agent, batch, duals, "dc3")
    td3, _, _ = actor_loss(agent, batch, duals, "td3_unconstrained")
    assert float(dc3.data) == float(td3.data)


@pytest.mark.acceptance("7")
def test_zero_dual_crl_gradient_is_td3_gradient(ieee14):
    cfg = TrainerConfig(horizon=4, alpha=0.0)
    agent = Agent.build(ieee14, NetConfig(), cfg)
    batch = random_batch(ieee14, np.random.default_rng(9), 5, 4)
    zero = DualState.zeros(ieee14, cfg)
    grads = {}
    for kind in ("crl", "td3_unconstrained"):
        agent.opt_actor.zero_grad()
        loss, _, _ = actor_loss(agent, batch, zero, kind)
        loss.backward()
        grads[kind] = {k: p.grad.copy() for k, p in agent.actor.params.items()}
    for k, g in grads["td3_unconstrained"].items():
        assert grads["crl"][k].tobytes() == g.tobytes()


# --- 6 and 8: desk-scale runs through the CLI ---

@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    runs = {}
    for kind in ("crl", *BASELINES):
        out = root / kind
        assert main(["train", "--config", DESK, "--kind", kind, "--output-dir", str(out)]) == 0
        ev = root / f"{kind}_eval"
        extra = [] if kind == "crl" else ["--no-oracle"]
        assert main(["eval", "--checkpoint", str(out), "--output-dir", str(ev), *extra]) == 0
        runs[kind] = {"train": read_summary(out / "summary.csv"), "eval": read_summary(ev / "eval_summary.csv"),
                      "dir": out}
    rnd = root / "random_eval"
    # ten held-out episodes give the per-episode spread of the random policy
    assert main(["eval", "--config", DESK, "--policy", "random", "--steps", "1920", "--no-oracle",
                 "--output-dir", str(rnd)]) == 0
    runs["random"] = {"eval": read_summary(rnd / "eval_summary.csv"),
                      "episodes": read_episodes(rnd / "eval_episodes.csv")}
    runs["elapsed"] = time.perf_counter() - t0
    runs["root"] = root
    return runs


@pytest.mark.slow
@pytest.mark.acceptance("6")
def test_desk_runtime(desk, record_property):
    record_property("seconds", round(desk["elapsed"], 1))
    assert desk["elapsed"] < 15 * 60


@pytest.mark.slow
@pytest.mark.acceptance("6a")
def test_crl_beats_random(desk, record_property):
    crl = desk["crl"]["eval"]["mean_reward"]
    rnd = np.array(desk["random"]["episodes"])
    record_property("crl_mean_reward", round(crl, 4))
    record_property("random_mean_reward", round(rnd.mean(), 4))
    record_property("random_std", round(rnd.std(), 4))
    assert crl >= rnd.mean() + 3 * rnd.std()


@pytest.mark.slow
@pytest.mark.acceptance("6b")
def test_gap_within_bound(desk, record_property):
    gap = desk["crl"]["eval"]["gap_percent"]
    record_property("gap_percent", round(gap, 3))
    assert np.isfinite(gap)
    assert gap <= 25.0


@pytest.mark.slow
@pytest.mark.acceptance("6c")
@pytest.mark.parametrize("baseline", BASELINES)
@pytest.mark.parametrize("rate", ["feasible_vm_rate", "feasible_slack_rate"])
def test_crl_feasibility_exceeds_baseline(desk, baseline, rate, record_property):
    crl, base = desk["crl"]["eval"][rate], desk[baseline]["eval"][rate]
    record_property(f"crl_{rate}", crl)
    record_property(f"{baseline}_{rate}", base)
    record_property(f"{baseline}_mean_reward", round(desk[baseline]["eval"]["mean_reward"], 4))
    assert desk["crl"]["eval"]["n_samples"] == 500
    assert crl > base


@pytest.mark.slow
@pytest.mark.acceptance("6d")
def test_equality_residual_shrinks(desk, record_property):
    s = desk["crl"]["train"]
    record_property("r_lambda_first_update", round(s["r_lambda_first_update"], 4))
    record_property("r_lambda_final", round(s["r_lambda_final"], 4))
    assert s["r_lambda_final"] <= 0.25 * s["r_lambda_first_update"]


@pytest.mark.slow
@pytest.mark.acceptance("8")
def test_repeat_training_is_byte_identical(desk):
    again = desk["root"] / "crl_repeat"
    assert main(["train", "--config", DESK, "--kind", "crl", "--output-dir", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (desk["crl"]["dir"] / "metrics.csv").read_bytes()
