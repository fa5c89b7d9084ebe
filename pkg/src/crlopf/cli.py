"""Command-line entry point: training, evaluation and one-shot solver runs with CSV output.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
Environment overrides: CRLOPF_OUTPUT_DIR (output directory), CRLOPF_THREADS (eval worker threads).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .autodiff import CheckpointError, load_params, save_params
from .env import ScenarioConfig, env_step, generate_scenario, initial_state
from .evaluation import ROW_COLUMNS, actor_policy, evaluate, oracle_replay_factory, random_policy
from .grid import CaseError, GridCase, load_case
from .nets import ActorNet, NetConfig, PredictorNet
from .oracle import OracleError, OracleOptions, OracleProblem, solve_multiperiod
from .powerflow import PowerFlowError, PowerFlowSpec, nodal_schedule, newton_solve, pf_residual
from .trainer import METRIC_COLUMNS, TrainerConfig, train

log = logging.getLogger("crlopf")

SLACK_OVERRIDES = {"slack_p_min": "gen_p_min", "slack_p_max": "gen_p_max",
                   "slack_q_min": "gen_q_min", "slack_q_max": "gen_q_max"}
CONFIG_DIR = Path(__file__).parent / "configs"
CONFIG_KEYS = {"case", "case_overrides", "scenario", "trainer", "net", "eval", "output_dir"}


@dataclass
class EvalSettings:
    steps: int = 1000
    seed: int = 10_000
    oracle: bool = True
    oracle_restarts: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSettings":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown eval keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class RunConfig:
    case: str = "ieee14"
    case_overrides: dict = field(default_factory=dict)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    net: NetConfig = field(default_factory=NetConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    output_dir: str = "runs"

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "RunConfig":
        extra = set(d) - CONFIG_KEYS
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        trainer = TrainerConfig.from_dict(d.get("trainer", {}))
        net = dict(d.get("net", {}))
        net.setdefault("horizon", trainer.horizon)
        case = str(d.get("case", "ieee14"))
        # relative case paths are taken relative to the config file when they exist there
        if base is not None and not Path(case).is_absolute() and (base / case).exists():
            case = str(base / case)
        unknown = set(d.get("case_overrides", {})) - set(SLACK_OVERRIDES)
        if unknown:
            raise ValueError(f"unknown case overrides: {sorted(unknown)}")
        return cls(case=case, case_overrides=dict(d.get("case_overrides", {})),
                   scenario=ScenarioConfig.from_dict(d.get("scenario", {})), trainer=trainer,
                   net=NetConfig.from_dict(net), eval=EvalSettings.from_dict(d.get("eval", {})),
                   output_dir=str(d.get("output_dir", "runs")))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        p = Path(path)
        if not p.exists() and (CONFIG_DIR / f"{p.name}.json").exists():
            p = CONFIG_DIR / f"{p.name}.json"
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{p}: {exc}") from exc
        return cls.from_dict(doc, p.parent)

    def to_dict(self) -> dict:
        return {"case": self.case, "case_overrides": self.case_overrides, "scenario": asdict(self.scenario),
                "trainer": self.trainer.to_dict(), "net": asdict(self.net), "eval": asdict(self.eval),
                "output_dir": self.output_dir}

    def hash(self) -> str:
        return hashlib.sha256(_canonical(self.to_dict()).encode()).hexdigest()

    def build_case(self) -> GridCase:
        return apply_overrides(load_case(self.case), self.case_overrides)


def apply_overrides(case: GridCase, overrides: dict) -> GridCase:
    changes = {}
    for key, value in overrides.items():
        name = SLACK_OVERRIDES[key]
        arr = changes.get(name, getattr(case, name)).copy()
        arr[case.slack_gen] = float(value)
        changes[name] = arr
    return replace(case, **changes) if changes else case


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, columns, rows) -> None:
    """Header row plus one line per row; rows are dicts or sequences in column order."""
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else r
            w.writerow([_cell(v) for v in vals])


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, seeds: dict, outputs: list[Path]) -> None:
    doc = {
        "command": command,
        "config_hash": hashlib.sha256(_canonical(config).encode()).hexdigest(),
        "config": config,
        "seeds": seeds,
        "versions": {"crlopf": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "outputs": {str(p.relative_to(out)): _file_digest(p) for p in outputs},
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _output_dir(args, default: str) -> Path:
    out = Path(args.output_dir or os.environ.get("CRLOPF_OUTPUT_DIR") or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args) -> int:
    raw = args.threads if args.threads is not None else os.environ.get("CRLOPF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"thread count must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError("thread count must be positive")
    return n


def _load_config(args) -> RunConfig:
    return RunConfig.load(args.config) if args.config else RunConfig()


# --- train ---

def summarize_training(art) -> list[tuple[str, float]]:
    m = art.metrics
    tail = m[-max(1, len(m) // 10):] if m else []
    rows = [
        ("steps", len(m)),
        ("final_reward_mean", float(np.mean([x["reward"] for x in tail])) if tail else float("nan")),
        ("final_feasible_vm_rate", float(np.mean([x["feasible_vm"] for x in tail])) if tail else float("nan")),
        ("final_feasible_slack_rate", float(np.mean([x["feasible_slack"] for x in tail])) if tail else float("nan")),
        ("dual_updates", len(art.dual_history)),
        ("r_lambda_first_update", art.dual_history[0]["r_lambda_norm"] if art.dual_history else float("nan")),
    ]
    final = art.final_residuals or (float("nan"), float("nan"))
    rows += [("r_lambda_final", final[0]), ("r_mu_final", final[1])]
    return rows


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.iterations is not None:
        cfg = replace(cfg, trainer=replace(cfg.trainer, max_iterations=args.iterations))
    if args.seed is not None:
        cfg = replace(cfg, trainer=replace(cfg.trainer, seed=args.seed))
    if args.kind is not None:
        cfg = replace(cfg, trainer=replace(cfg.trainer, kind=args.kind))
    case = cfg.build_case()
    out = _output_dir(args, cfg.output_dir)
    art = train(case, cfg.trainer, cfg.net, cfg.scenario, progress=args.progress)

    ckpt = out / "checkpoint"
    ckpt.mkdir(exist_ok=True)
    save_params(ckpt / "policy.json", {**art.agent.actor.params, **art.agent.predictor.params})
    for i, critic in enumerate(art.agent.critics, start=1):
        save_params(ckpt / f"critic_{i}.json", critic.params)
    duals = {"lambda": {k: v.tolist() for k, v in art.duals.lam.items()},
             "mu": {k: v.tolist() for k, v in art.duals.mu.items()},
             "alpha": {k: v.tolist() for k, v in art.duals.alpha.items()}}
    (ckpt / "duals.json").write_text(json.dumps(duals, sort_keys=True))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    write_csv(out / "metrics.csv", METRIC_COLUMNS, art.metrics)
    write_csv(out / "dual_updates.csv", ("step", "r_lambda_norm", "r_mu_norm"), art.dual_history)
    summary = summarize_training(art)
    write_csv(out / "summary.csv", ("metric", "value"), summary)
    outputs = [out / "metrics.csv", out / "dual_updates.csv", out / "summary.csv", out / "config.json",
               ckpt / "policy.json", ckpt / "critic_1.json", ckpt / "critic_2.json", ckpt / "duals.json"]
    write_manifest(out, "train", cfg.to_dict(), {"trainer": cfg.trainer.seed, "scenario": cfg.scenario.seed},
                   outputs)
    log.info("training outputs written to %s", out)
    for k, v in summary:
        print(f"{k}: {_cell(v)}")
    return 0


# --- eval ---

def _policy_file(checkpoint: Path) -> Path:
    for cand in (checkpoint / "checkpoint" / "policy.json", checkpoint / "policy.json"):
        if checkpoint.is_dir() and cand.exists():
            return cand
    return checkpoint / "policy.json" if checkpoint.is_dir() else checkpoint


def _stored_config(checkpoint: Path) -> Path | None:
    # train writes config.json next to the checkpoint directory
    path = _policy_file(checkpoint)
    for cand in (path.parent / "config.json", path.parent.parent / "config.json"):
        if cand.exists():
            return cand
    return None


def load_policy(case: GridCase, cfg: RunConfig, checkpoint: Path):
    actor = ActorNet(case, cfg.net)
    predictor = PredictorNet(case, cfg.net)
    path = _policy_file(checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        load_params(path, {**actor.params, **predictor.params})
    except (KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    return actor


def cmd_eval(args) -> int:
    if args.config is None and args.checkpoint is not None:
        stored = _stored_config(Path(args.checkpoint))
        cfg = RunConfig.load(stored) if stored else RunConfig()
    else:
        cfg = _load_config(args)
    case = cfg.build_case()
    steps = args.steps if args.steps is not None else cfg.eval.steps
    seed = args.seed if args.seed is not None else cfg.eval.seed
    T = cfg.trainer.horizon
    policy = factory = None
    if args.policy == "actor":
        if args.checkpoint is None:
            raise ValueError("--checkpoint is required for the actor policy")
        policy = actor_policy(load_policy(case, cfg, Path(args.checkpoint)))
    elif args.policy == "random":
        policy = random_policy(case, T, seed)
    else:
        factory = oracle_replay_factory(case, T, OracleOptions(restarts=cfg.eval.oracle_restarts, strict=False))
    oracle = None
    if cfg.eval.oracle and not args.no_oracle:
        oracle = OracleOptions(restarts=cfg.eval.oracle_restarts, strict=False)
    report = evaluate(case, policy, cfg.scenario, steps, T, seed=seed, r_fail=cfg.trainer.r_fail,
                      oracle=oracle, threads=_threads(args), policy_factory=factory)

    out = _output_dir(args, cfg.output_dir)
    write_csv(out / "eval_steps.csv", ROW_COLUMNS, report.rows)
    ep_rows = []
    for k, r in enumerate(report.episode_rewards):
        orc = report.oracle_episode_rewards[k] if report.oracle_episode_rewards else float("nan")
        ep_rows.append((k, r, orc))
    write_csv(out / "eval_episodes.csv", ("episode", "mean_reward", "oracle_mean_reward"), ep_rows)
    summary = [(k, float("nan") if v is None else v) for k, v in report.summary().items()]
    write_csv(out / "eval_summary.csv", ("metric", "value"), summary)
    write_manifest(out, f"eval --policy {args.policy}", cfg.to_dict(), {"eval": seed},
                   [out / "eval_steps.csv", out / "eval_episodes.csv", out / "eval_summary.csv"])
    for k, v in summary:
        print(f"{k}: {_cell(v)}")
    return 0


# --- pf ---

def cmd_pf(args) -> int:
    case = load_case(args.case)
    gp = (case.gen_p_min + case.gen_p_max) / 2
    gq = (case.gen_q_min + case.gen_q_max) / 2
    z = np.zeros(case.n_bess)
    p, q = nodal_schedule(case, gp, gq, z, z, case.d_p, case.d_q)
    res = newton_solve(case, PowerFlowSpec(p, q, slack=case.slack_bus), tol=args.tol)
    dp, dq = pf_residual(res.v, case.Y, p, q)
    mask = np.arange(case.n_bus) != case.slack_bus
    norm = float(max(np.abs(dp[mask]).max(initial=0.0), np.abs(dq[mask]).max(initial=0.0)))
    if args.output_dir or os.environ.get("CRLOPF_OUTPUT_DIR"):
        out = _output_dir(args, "runs")
        rows = [(i + 1, float(abs(v)), float(np.angle(v)), dp[i], dq[i]) for i, v in enumerate(res.v)]
        write_csv(out / "pf.csv", ("bus", "vm", "va", "p_mismatch", "q_mismatch"), rows)
    print(f"iterations: {res.iterations}")
    print(f"mismatch_inf_norm: {norm:.3e}")
    for k, m in enumerate(res.mismatch_history):
        print(f"  iteration {k}: {m:.3e}")
    return 0


# --- oracle ---

def cmd_oracle(args) -> int:
    cfg = _load_config(args)
    case = apply_overrides(load_case(args.case), cfg.case_overrides) if args.case else cfg.build_case()
    T = args.horizon
    if args.nominal:
        d_p = np.tile(case.d_p, (T, 1))
        d_q = np.tile(case.d_q, (T, 1))
    else:
        scen_cfg = cfg.scenario if cfg.scenario.lookahead >= T else replace(cfg.scenario, lookahead=T)
        sc = generate_scenario(case, scen_cfg, args.scenario_seed)
        s = args.start
        if s + T > len(sc.d_p):
            raise ValueError(f"start + horizon exceeds the scenario length {len(sc.d_p)}")
        d_p, d_q = sc.d_p[s:s + T], sc.d_q[s:s + T]
    soc0 = np.full(case.n_bess, args.soc0)
    res = solve_multiperiod(OracleProblem(case, d_p, d_q, soc0),
                            OracleOptions(restarts=args.restarts, tol=args.tol))

    out = _output_dir(args, cfg.output_dir)
    G, B = case.n_gen, case.n_bess
    cols = (["t"] + [f"g_p_{i + 1}" for i in range(G)] + [f"g_q_{i + 1}" for i in range(G)]
            + [f"p_ch_{j + 1}" for j in range(B)] + [f"p_dis_{j + 1}" for j in range(B)]
            + [f"soc_{j + 1}" for j in range(B)] + [f"vm_{i + 1}" for i in range(case.n_bus)])
    rows = []
    for t, a in enumerate(res.actions):
        rows.append([t, *a.g_p, *a.g_q, *a.p_ch, *a.p_dis, *res.soc[t], *np.abs(res.voltages[t])])
    write_csv(out / "oracle_actions.csv", cols, rows)
    summary = [("objective", res.objective), *sorted(res.kkt.items()), ("converged", res.converged),
               ("outer_iterations", res.outer_iterations)]
    write_csv(out / "oracle_summary.csv", ("metric", "value"), summary)
    write_manifest(out, "oracle", {"case": str(args.case or cfg.case), "horizon": T, "nominal": args.nominal,
                                   "scenario": asdict(cfg.scenario), "start": args.start, "soc0": args.soc0},
                   {"scenario": args.scenario_seed}, [out / "oracle_actions.csv", out / "oracle_summary.csv"])
    for k, v in summary:
        print(f"{k}: {_cell(v)}")
    return 0


# --- env-rollout ---

def cmd_env_rollout(args) -> int:
    cfg = _load_config(args)
    case = apply_overrides(load_case(args.case), cfg.case_overrides) if args.case else cfg.build_case()
    T = cfg.trainer.horizon
    scen_cfg = cfg.scenario if cfg.scenario.lookahead >= T else replace(cfg.scenario, lookahead=T)
    sc = generate_scenario(case, scen_cfg, args.scenario_seed)
    if args.steps < 1 or args.steps > sc.episode_len:
        raise ValueError(f"steps must lie in [1, {sc.episode_len}]")
    if args.policy == "random":
        policy = random_policy(case, T, args.seed)
    else:
        policy = lambda state: np.full((T, case.action_dim), 0.5)  # noqa: E731
    state = initial_state(case, sc, T)
    rows = []
    for _ in range(args.steps):
        block = policy(state)
        nxt, r, info = env_step(state, block, sc, case, cfg.trainer.r_fail)
        rows.append([state.t, *info["soc"], r, *info["vm"], info["slack_p"], info["feasible_vm"],
                     info["feasible_slack"], info["failed"]])
        if info["failed"]:
            break
        state = nxt
    cols = (["t"] + [f"soc_{j + 1}" for j in range(case.n_bess)] + ["reward"]
            + [f"vm_{i + 1}" for i in range(case.n_bus)] + ["slack_p", "feasible_vm", "feasible_slack", "failed"])
    out = _output_dir(args, cfg.output_dir)
    write_csv(out / "rollout.csv", cols, rows)
    write_manifest(out, "env-rollout", {"case": str(args.case or cfg.case), "scenario": asdict(scen_cfg),
                                        "policy": args.policy, "steps": args.steps},
                   {"scenario": args.scenario_seed, "policy": args.seed}, [out / "rollout.csv"])
    print(f"steps: {len(rows)}")
    print(f"mean_reward: {_cell(float(np.mean([r[1 + case.n_bess] for r in rows])))}")
    return 0


# --- gradcheck ---

def cmd_gradcheck(args) -> int:
    from .gradsuite import TOL, run_suite

    rows = run_suite(instances=args.instances, seed=args.seed, only=args.only)
    width = max(len(r.name) for r in rows)
    for r in rows:
        print(f"{r.name:<{width}}  instances {r.instances}  max_rel_error {r.max_error:.2e}  "
              f"{'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in rows if not r.passed]
    if failed:
        print(f"{len(failed)} checks exceed {TOL:g}: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crlopf", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"crlopf {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--output-dir", help="output directory (overrides CRLOPF_OUTPUT_DIR and the config)")

    p = sub.add_parser("train", help="train an agent and write metrics, checkpoint and summary")
    common(p)
    p.add_argument("--iterations", type=int, help="override trainer.max_iterations")
    p.add_argument("--seed", type=int, help="override trainer.seed")
    p.add_argument("--kind", choices=("crl", "penalty", "dc3", "td3_unconstrained"), help="override trainer.kind")
    p.add_argument("--progress", type=int, default=0, help="log a progress line every N steps (with -v)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="roll a frozen policy over held-out scenarios")
    common(p)
    p.add_argument("--checkpoint", help="training output directory, its checkpoint directory or a policy.json")
    p.add_argument("--policy", choices=("actor", "random", "oracle"), default="actor",
                   help="policy to evaluate (default: the checkpointed actor)")
    p.add_argument("--steps", type=int, help="evaluation steps (default: eval.steps)")
    p.add_argument("--seed", type=int, help="first held-out scenario seed (default: eval.seed)")
    p.add_argument("--no-oracle", action="store_true", help="skip the oracle comparison")
    p.add_argument("--threads", type=int, help="oracle worker threads (overrides CRLOPF_THREADS)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pf", help="one power flow at mid-range injections from a flat start")
    p.add_argument("--case", required=True, help="case file or bundled case name")
    p.add_argument("--tol", type=float, default=1e-8, help="mismatch tolerance")
    common(p, config=False)
    p.set_defaults(func=cmd_pf)

    p = sub.add_parser("oracle", help="solve the multi-period OPF with known demands")
    common(p)
    p.add_argument("--case", help="case file or bundled case name (default: from the config)")
    p.add_argument("--horizon", type=int, required=True, help="number of periods")
    p.add_argument("--nominal", action="store_true", help="use the case-file demand at every period")
    p.add_argument("--scenario-seed", type=int, default=0, help="scenario seed for the demand profile")
    p.add_argument("--start", type=int, default=0, help="first scenario period")
    p.add_argument("--soc0", type=float, default=0.5, help="initial state of charge of every unit")
    p.add_argument("--restarts", type=int, default=0, help="random restarts")
    p.add_argument("--tol", type=float, default=1e-6, help="KKT tolerance")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("env-rollout", help="step the environment and dump a CSV trace")
    common(p)
    p.add_argument("--case", help="case file or bundled case name (default: from the config)")
    p.add_argument("--steps", type=int, default=10, help="number of steps")
    p.add_argument("--policy", choices=("random", "mid"), default="random", help="action source")
    p.add_argument("--seed", type=int, default=0, help="random policy seed")
    p.add_argument("--scenario-seed", type=int, default=0, help="scenario seed")
    p.set_defaults(func=cmd_env_rollout)

    p = sub.add_parser("gradcheck", help="finite-difference check of every autodiff primitive and network")
    p.add_argument("--instances", type=int, default=20, help="random instances per check")
    p.add_argument("--seed", type=int, default=0, help="seed for the random instances")
    p.add_argument("--only", nargs="+", help="restrict to the named checks")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PowerFlowError, OracleError) as exc:
        print(f"crlopf: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (CaseError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"crlopf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
