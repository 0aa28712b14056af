"""Heterogeneous agent populations and their market-level aggregates.

Each agent carries four design scalars (autonomy ``A``, heterogeneity ``H``,
coupling ``C``, observability ``S``) plus a vendor assignment.  Vendor shares
follow a Zipf-like law ``rank ** -skew``; agents are allotted to vendors by
largest-remainder quotas so that ``V_i`` is exactly the realised fraction of
the population served by agent ``i``'s vendor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from afmm.errors import ConfigError, ContractError

PARAMS = ("A", "H", "C", "S")


@dataclass(frozen=True)
class AgentSpec:
    id: int
    A: float
    H: float
    C: float
    S: float
    vendor_id: int
    V: float
    weight: float
    position_limit: float


@dataclass(frozen=True)
class ParamBox:
    """Uniform sampling box ``[mean - half_width, mean + half_width]`` clipped to [0, 1]."""

    mean: float = 0.5
    half_width: float = 0.0


@dataclass
class PopulationConfig:
    n_agents: int = 100
    A: ParamBox = field(default_factory=ParamBox)
    H: ParamBox = field(default_factory=ParamBox)
    C: ParamBox = field(default_factory=ParamBox)
    S: ParamBox = field(default_factory=ParamBox)
    n_vendors: int = 5
    vendor_skew: float = 1.0
    weight_mode: Literal["equal", "random"] = "equal"
    position_limit: float = 200.0

    def validate(self) -> None:
        if not isinstance(self.n_agents, (int, np.integer)) or self.n_agents <= 0:
            raise ConfigError(f"n_agents must be a positive integer, got {self.n_agents!r}")
        if not isinstance(self.n_vendors, (int, np.integer)) or self.n_vendors <= 0:
            raise ConfigError(f"n_vendors must be a positive integer, got {self.n_vendors!r}")
        for name in PARAMS:
            box = getattr(self, name)
            if not 0.0 <= box.mean <= 1.0:
                raise ConfigError(f"{name} mean must lie in [0, 1], got {box.mean}")
            if box.half_width < 0:
                raise ConfigError(f"{name} half_width must be >= 0, got {box.half_width}")
        if self.vendor_skew < 0:
            raise ConfigError(f"vendor_skew must be >= 0, got {self.vendor_skew}")
        if self.weight_mode not in ("equal", "random"):
            raise ConfigError(f"weight_mode must be 'equal' or 'random', got {self.weight_mode!r}")
        if not self.position_limit > 0:
            raise ConfigError(f"position_limit must be > 0, got {self.position_limit}")


@dataclass(frozen=True)
class AgentPopulation:
    agents: tuple[AgentSpec, ...]
    vendor_shares: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.agents)

    def column(self, name: str) -> np.ndarray:
        """Return one per-agent field as an array, in agent-id order."""
        return np.array([getattr(a, name) for a in self.agents])


@dataclass(frozen=True)
class ParameterAggregates:
    A: float
    H: float
    C: float
    S: float
    V: float


def zipf_shares(n_vendors: int, skew: float) -> np.ndarray:
    ranks = np.arange(1, n_vendors + 1, dtype=float)
    raw = ranks ** (-skew)
    return raw / raw.sum()


def _quota_counts(shares: np.ndarray, n: int) -> np.ndarray:
    # largest remainder; ties go to the better-ranked vendor
    raw = shares * n
    counts = np.floor(raw).astype(int)
    short = n - int(counts.sum())
    order = np.lexsort((np.arange(len(shares)), -(raw - counts)))
    counts[order[:short]] += 1
    return counts


def build_population(config: PopulationConfig, seed: int) -> AgentPopulation:
    config.validate()
    rng = np.random.default_rng(seed)
    n = int(config.n_agents)

    sampled = {}
    for name in PARAMS:
        box = getattr(config, name)
        lo = max(0.0, box.mean - box.half_width)
        hi = min(1.0, box.mean + box.half_width)
        draws = rng.random(n)
        sampled[name] = lo + (hi - lo) * draws if hi > lo else np.full(n, lo)

    counts = _quota_counts(zipf_shares(int(config.n_vendors), config.vendor_skew), n)
    vendor_of = np.repeat(np.arange(len(counts)), counts)
    vendor_of = vendor_of[rng.permutation(n)]
    shares = counts / n

    if config.weight_mode == "equal":
        weights = np.full(n, 1.0 / n)
    else:
        raw = rng.random(n)
        weights = raw / raw.sum()

    agents = tuple(
        AgentSpec(
            id=i,
            A=float(sampled["A"][i]),
            H=float(sampled["H"][i]),
            C=float(sampled["C"][i]),
            S=float(sampled["S"][i]),
            vendor_id=int(vendor_of[i]),
            V=float(shares[vendor_of[i]]),
            weight=float(weights[i]),
            position_limit=float(config.position_limit),
        )
        for i in range(n)
    )
    return AgentPopulation(agents=agents, vendor_shares=tuple(float(s) for s in shares))


def vendor_concentration(pop: AgentPopulation) -> float:
    """Herfindahl index of vendor shares, in ``[1/K, 1]``."""
    if len(pop) == 0:
        raise ContractError("population is empty")
    shares = np.asarray(pop.vendor_shares)
    return float(np.sum(shares * shares))


def population_summary(pop: AgentPopulation) -> ParameterAggregates:
    if len(pop) == 0:
        raise ContractError("population is empty")
    w = pop.column("weight")
    total = w.sum()
    if total <= 0:
        w = np.full(len(pop), 1.0)
        total = float(len(pop))

    def wmean(name: str) -> float:
        return float(np.dot(w, pop.column(name)) / total)

    return ParameterAggregates(
        A=wmean("A"), H=wmean("H"), C=wmean("C"), S=wmean("S"), V=vendor_concentration(pop)
    )
