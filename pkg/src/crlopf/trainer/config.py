from __future__ import annotations

from dataclasses import asdict, dataclass

FAMILIES = ("p_balance", "q_balance", "soc", "soc_max", "soc_min", "v_tie", "v_max", "v_min")
EQUALITY = ("p_balance", "q_balance", "soc", "v_tie")
INEQUALITY = ("soc_max", "soc_min", "v_max", "v_min")
KINDS = ("crl", "penalty", "dc3", "td3_unconstrained")


@dataclass
class TrainerConfig:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    dual_period: int = 500
    batch_size: int = 100
    buffer_size: int = 500
    max_iterations: int = 10000
    exploration_steps: int = 200
    horizon: int = 4
    r_fail: float = -100.0
    seed: int = 0
    lr: float = 1e-3
    explore_noise: float = 0.1
    # penalty coefficients alpha_1..alpha_8 in FAMILIES order; a scalar applies to all
    alpha: float | list = 1.0
    # dual step sizes; None reuses alpha
    dual_step: float | list | None = None
    alpha_growth: bool = False
    kind: str = "crl"
    penalty_beta: float = 1.0
    target_noise: float = 0.0
    target_noise_clip: float = 0.5

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("policy_delay", "dual_period", "batch_size", "buffer_size", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.max_iterations < 0 or self.exploration_steps < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        for name in ("alpha", "dual_step"):
            v = getattr(self, name)
            if isinstance(v, (list, tuple)) and len(v) != len(FAMILIES):
                raise ValueError(f"{name} needs {len(FAMILIES)} entries")

    def per_family(self, name: str) -> dict[str, float]:
        v = getattr(self, name)
        if v is None:
            return self.per_family("alpha")
        if isinstance(v, (list, tuple)):
            return {f: float(x) for f, x in zip(FAMILIES, v)}
        return {f: float(v) for f in FAMILIES}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown trainer keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)
