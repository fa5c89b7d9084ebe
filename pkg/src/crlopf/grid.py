"""Static grid model: case loading, admittance matrix and device placement."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CASE_DIR = Path(__file__).parent / "cases"

_TOP_KEYS = {"base_mva", "buses", "branches", "generators", "bess", "dt_over_ecap"}
_BUS_KEYS = {"id", "v_min", "v_max", "d_p", "d_q"}
_BRANCH_KEYS = {"from", "to", "r", "x", "b_shunt"}
_GEN_KEYS = {"bus", "p_min", "p_max", "q_min", "q_max", "cost_a", "cost_b", "cost_c", "is_slack"}
_BESS_KEYS = {"bus", "p_ch_rated", "p_dis_rated", "eta_ch", "eta_dis", "soc_min", "soc_max"}


class CaseError(ValueError):
    """Raised for malformed or inconsistent case files."""


class CaseParseError(CaseError):
    pass


class CaseValidationError(CaseError):
    pass


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    series: complex
    shunt: complex  # total line charging; half is placed at each end


@dataclass(frozen=True)
class BessParams:
    eta_ch: np.ndarray
    eta_dis: np.ndarray
    p_ch_rated: np.ndarray
    p_dis_rated: np.ndarray
    soc_min: np.ndarray
    soc_max: np.ndarray
    dt_over_ecap: float = 0.005
    # Informational only; the dynamics use dt_over_ecap.
    e_cap: float = 1000.0
    dt: float = 18.0

    def __post_init__(self):
        if np.any(self.eta_ch <= 0) or np.any(self.eta_ch > 1):
            raise CaseValidationError("eta_ch must lie in (0, 1]")
        if np.any(self.eta_dis <= 0) or np.any(self.eta_dis > 1):
            raise CaseValidationError("eta_dis must lie in (0, 1]")
        if np.any(self.soc_min < 0) or np.any(self.soc_max > 1) or np.any(self.soc_min >= self.soc_max):
            raise CaseValidationError("need 0 <= soc_min < soc_max <= 1")
        if np.any(self.p_ch_rated < 0) or np.any(self.p_dis_rated < 0):
            raise CaseValidationError("rated powers must be non-negative")
        if not self.dt_over_ecap > 0:
            raise CaseValidationError("dt_over_ecap must be positive")

    @property
    def n(self) -> int:
        return len(self.eta_ch)


@dataclass(frozen=True)
class MappingMatrices:
    m_g: np.ndarray  # N x G
    m_b: np.ndarray  # N x B


@dataclass(frozen=True)
class GridCase:
    n_bus: int
    slack_bus: int
    gen_buses: np.ndarray
    bess_buses: np.ndarray
    branches: tuple[Branch, ...]
    Y: np.ndarray
    gen_p_min: np.ndarray
    gen_p_max: np.ndarray
    gen_q_min: np.ndarray
    gen_q_max: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    cost_a: np.ndarray
    cost_b: np.ndarray
    cost_c: np.ndarray
    bess: BessParams
    d_p: np.ndarray
    d_q: np.ndarray
    base_mva: float = 100.0
    maps: MappingMatrices = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "maps", mapping_matrices(self.n_bus, self.gen_buses, self.bess_buses))
        _validate(self)

    @property
    def n_gen(self) -> int:
        return len(self.gen_buses)

    @property
    def n_bess(self) -> int:
        return len(self.bess_buses)

    @property
    def slack_gen(self) -> int:
        """Index (into the generator list) of the slack generator."""
        return int(np.flatnonzero(self.gen_buses == self.slack_bus)[0])

    @property
    def action_dim(self) -> int:
        return 2 * self.n_gen + 2 * self.n_bess


def _validate(case: GridCase) -> None:
    n = case.n_bus
    if case.Y.shape != (n, n):
        raise CaseValidationError("admittance matrix has wrong shape")
    if not np.array_equal(case.Y, case.Y.T):
        raise CaseValidationError("admittance matrix is not complex symmetric")
    if np.any(case.gen_p_min > case.gen_p_max) or np.any(case.gen_q_min > case.gen_q_max):
        raise CaseValidationError("generator bound inversion")
    if np.any(case.v_min <= 0) or np.any(case.v_min > case.v_max):
        raise CaseValidationError("voltage bounds must satisfy 0 < v_min <= v_max")
    for name in ("cost_a", "cost_b", "cost_c"):
        if np.any(getattr(case, name) < 0):
            raise CaseValidationError(f"{name} must be non-negative")
    if case.slack_bus not in set(case.gen_buses.tolist()):
        raise CaseValidationError("slack bus must host a generator")
    for arr in (case.gen_buses, case.bess_buses):
        if len(arr) and (arr.min() < 0 or arr.max() >= n):
            raise CaseValidationError("device placed on a non-existent bus")
    if case.bess.n != case.n_bess:
        raise CaseValidationError("BESS parameter length mismatch")


def build_admittance(branches: Sequence[Branch], n_bus: int) -> np.ndarray:
    """Nodal admittance matrix from pi-model branches (no taps or phase shifters)."""
    Y = np.zeros((n_bus, n_bus), dtype=complex)
    for br in branches:
        i, j = br.from_bus, br.to_bus
        if not (0 <= i < n_bus and 0 <= j < n_bus):
            raise IndexError(f"branch ({i}, {j}) references a bus outside 0..{n_bus - 1}")
        if i == j:
            raise CaseValidationError(f"self-loop branch at bus {i}")
        half = br.shunt / 2
        Y[i, i] += br.series + half
        Y[j, j] += br.series + half
        Y[i, j] -= br.series
        Y[j, i] -= br.series
    return Y


def mapping_matrices(n_bus: int, gen_buses: np.ndarray, bess_buses: np.ndarray) -> MappingMatrices:
    m_g = np.zeros((n_bus, len(gen_buses)))
    m_g[gen_buses, np.arange(len(gen_buses))] = 1.0
    m_b = np.zeros((n_bus, len(bess_buses)))
    m_b[bess_buses, np.arange(len(bess_buses))] = 1.0
    return MappingMatrices(m_g, m_b)


def expand_to_nodes(m: MappingMatrices, g: np.ndarray, which: str = "gen") -> np.ndarray:
    """Scatter a per-device vector onto the buses hosting those devices."""
    mat = {"gen": m.m_g, "bess": m.m_b}[which]
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != mat.shape[1]:
        raise ValueError(f"expected {mat.shape[1]} device entries, got {g.shape[-1]}")
    return g @ mat.T


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise CaseParseError(f"{where}: expected an object")
    extra = set(obj) - allowed
    missing = allowed - set(obj)
    if extra:
        raise CaseParseError(f"{where}: unknown keys {sorted(extra)}")
    if missing:
        raise CaseParseError(f"{where}: missing keys {sorted(missing)}")


def case_from_dict(data: dict) -> GridCase:
    _check_keys(data, _TOP_KEYS, "case")
    buses = data["buses"]
    if not buses:
        raise CaseValidationError("case has no buses")
    for k, b in enumerate(buses):
        _check_keys(b, _BUS_KEYS, f"buses[{k}]")
    ids = [int(b["id"]) for b in buses]
    if sorted(ids) != list(range(1, len(ids) + 1)):
        raise CaseValidationError("bus ids must be 1..N without gaps")
    order = np.argsort(ids)
    buses = [buses[i] for i in order]
    n = len(buses)

    def bus_index(raw, where):
        idx = int(raw) - 1
        if not 0 <= idx < n:
            raise CaseValidationError(f"{where}: bus {raw} does not exist")
        return idx

    branches = []
    for k, br in enumerate(data["branches"]):
        _check_keys(br, _BRANCH_KEYS, f"branches[{k}]")
        z = complex(br["r"], br["x"])
        if z == 0:
            raise CaseValidationError(f"branches[{k}]: zero impedance")
        branches.append(Branch(bus_index(br["from"], f"branches[{k}]"), bus_index(br["to"], f"branches[{k}]"),
                               1 / z, complex(0.0, br["b_shunt"])))

    gens = data["generators"]
    if not gens:
        raise CaseValidationError("case has no generators")
    for k, g in enumerate(gens):
        _check_keys(g, _GEN_KEYS, f"generators[{k}]")
    slack = [bus_index(g["bus"], f"generators[{k}]") for k, g in enumerate(gens) if g["is_slack"]]
    if len(slack) != 1:
        raise CaseValidationError("exactly one generator must be flagged is_slack")

    bess_rows = data["bess"]
    for k, b in enumerate(bess_rows):
        _check_keys(b, _BESS_KEYS, f"bess[{k}]")

    def col(rows, key):
        return np.array([float(r[key]) for r in rows], dtype=float)

    bess = BessParams(
        eta_ch=col(bess_rows, "eta_ch"), eta_dis=col(bess_rows, "eta_dis"),
        p_ch_rated=col(bess_rows, "p_ch_rated"), p_dis_rated=col(bess_rows, "p_dis_rated"),
        soc_min=col(bess_rows, "soc_min"), soc_max=col(bess_rows, "soc_max"),
        dt_over_ecap=float(data["dt_over_ecap"]),
    )
    return GridCase(
        n_bus=n,
        slack_bus=slack[0],
        gen_buses=np.array([bus_index(g["bus"], "generators") for g in gens], dtype=int),
        bess_buses=np.array([bus_index(b["bus"], "bess") for b in bess_rows], dtype=int),
        branches=tuple(branches),
        Y=build_admittance(branches, n),
        gen_p_min=col(gens, "p_min"), gen_p_max=col(gens, "p_max"),
        gen_q_min=col(gens, "q_min"), gen_q_max=col(gens, "q_max"),
        v_min=col(buses, "v_min"), v_max=col(buses, "v_max"),
        cost_a=col(gens, "cost_a"), cost_b=col(gens, "cost_b"), cost_c=col(gens, "cost_c"),
        bess=bess,
        d_p=col(buses, "d_p"), d_q=col(buses, "d_q"),
        base_mva=float(data["base_mva"]),
    )


def load_case(path: str | Path) -> GridCase:
    """Load a JSON case file. Bare names such as ``ieee14`` resolve to the bundled cases."""
    p = Path(path)
    if not p.exists() and (CASE_DIR / f"{p.name}.json").exists():
        p = CASE_DIR / f"{p.name}.json"
    if not p.exists():
        raise FileNotFoundError(f"case file not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"{p}: {exc}") from exc
    return case_from_dict(data)
