"""The agentic market loop.

One step runs, in this order:

1. ``advance_environment``: fundamental random walk with news jumps, public
   signal, common model error, vendor outages, stress and depth.
2. beliefs: each agent mixes a shared and an idiosyncratic model error,
   weighted by heterogeneity ``H`` so that belief-error variance does not
   depend on ``H``.
3. decisions: linear mispricing demand blended (weight ``C``) with a
   thresholded reaction to the public signal.
4. controls: outage containment, supervisory pause/flatten under stress,
   then autonomy-scaled execution with probabilistic approval delay.
5. aggregation ``Q = sum(w * q)`` and linear impact ``p += Q / D``.

Random draws come from a single PCG64 stream per run, consumed in a fixed
order every step regardless of state:

    zeta, u_jump, jump_size, eta, xi        (5 scalars, environment)
    u_outage[K]                             (one per vendor)
    idio[N]                                 (belief noise, agent-id order)
    u_ctrl[3, N]                            (freeze, flatten, approval)

so identical ``(config, seed)`` reproduce identical trajectories.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable

import numpy as np

from afmm.errors import ConfigError, ContractError
from afmm.metrics import (
    DEFAULT_TAIL,
    MetricBundle,
    action_similarity,
    expected_shortfall,
    liquidity_level,
    pricing_error,
    realized_volatility,
)
from afmm.population import AgentPopulation, AgentSpec, PopulationConfig, build_population

STATUSES = ("executed", "delayed", "paused", "frozen_safe", "forced_unwind")
EXECUTED, DELAYED, PAUSED, FROZEN_SAFE, FORCED_UNWIND = range(len(STATUSES))

SERIES_COLUMNS = (
    "t", "p", "v", "s", "Q", "D", "Z", "news",
    "n_executed", "n_delayed", "n_paused", "n_frozen", "n_unwind",
)


@dataclass
class SimConfig:
    horizon: int = 2000
    burn_in: int = 200
    p0: float = 100.0
    v0: float = 100.0
    sigma_v: float = 0.01
    jump_prob: float = 0.005
    sigma_jump: float = 0.2
    sigma_s: float = 0.5
    sigma_m: float = 0.3
    kappa: float = 20.0
    theta: float = 0.5
    depth0: float = 10.0
    gamma: float = 2.0
    depth_floor: float = 5.0
    stress_window: int = 20
    stress_threshold: float = 0.8
    flatten_fraction: float = 0.3
    pause_steps: int = 10
    outage_prob: float = 0.015
    outage_duration: int = 30
    unwind_rate: float = 0.2
    rho_window: int = 20
    rho_pairs: int = 200
    es_tail: float = DEFAULT_TAIL

    def validate(self) -> None:
        ints = ("horizon", "burn_in", "stress_window", "pause_steps", "outage_duration",
                "rho_window", "rho_pairs")
        for name in ints:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ConfigError(f"{f.name} must be finite, got {value!r}")
        if self.horizon <= 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if not 0 <= self.burn_in < self.horizon:
            raise ConfigError(f"burn_in must satisfy 0 <= burn_in < horizon ({self.burn_in} vs {self.horizon})")
        scales = ("sigma_v", "sigma_jump", "sigma_s", "sigma_m", "kappa", "theta", "depth0",
                  "gamma", "stress_threshold", "pause_steps", "outage_duration", "stress_window")
        for name in scales:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("jump_prob", "outage_prob", "flatten_fraction", "unwind_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if not self.depth_floor > 0:
            raise ConfigError(f"depth_floor must be > 0, got {self.depth_floor}")
        if self.rho_window < 2:
            raise ConfigError(f"rho_window must be >= 2, got {self.rho_window}")
        if self.rho_pairs < 1:
            raise ConfigError(f"rho_pairs must be >= 1, got {self.rho_pairs}")
        if not 0.0 < self.es_tail <= 0.5:
            raise ConfigError(f"es_tail must lie in (0, 0.5], got {self.es_tail}")


@dataclass(frozen=True)
class EnvSnapshot:
    t: int
    v: float
    s: float
    m: float
    news: float
    Z: float
    D: float
    failed_vendors: frozenset[int]


@dataclass(frozen=True)
class DecisionObject:
    agent_id: int
    d: float
    trigger_active: bool
    belief: float


@dataclass(frozen=True)
class RealizedAction:
    agent_id: int
    q: float
    status: str


@dataclass(frozen=True)
class StepRecord:
    t: int
    p: float
    v: float
    s: float
    Q: float
    D: float
    Z: float
    news: float
    q: np.ndarray
    counts: tuple[int, int, int, int, int]

    def row(self) -> tuple:
        return (self.t, self.p, self.v, self.s, self.Q, self.D, self.Z, self.news) + tuple(self.counts)


@dataclass
class SimState:
    config: SimConfig
    population: AgentPopulation
    rng: np.random.Generator
    t: int
    p: float
    v: float
    positions: np.ndarray
    pending: np.ndarray
    pause: np.ndarray
    outage_timer: np.ndarray
    prices: list[float]
    pairs: np.ndarray
    # per-agent parameter columns, cached for the vectorised step
    A: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)
    S: np.ndarray = field(repr=False)
    vendor: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    limits: np.ndarray = field(repr=False)
    env: EnvSnapshot | None = None


@dataclass
class SimResult:
    records: list[StepRecord]
    metrics: MetricBundle
    manifest: dict
    population: AgentPopulation | None = None

    def series_rows(self) -> Iterable[tuple]:
        return (r.row() for r in self.records)

    def to_json(self) -> str:
        payload = {
            "manifest": self.manifest,
            "metrics": _jsonable_metrics(self.metrics),
            "series": {"columns": list(SERIES_COLUMNS), "rows": [list(r) for r in self.series_rows()]},
            "actions": [r.q.tolist() for r in self.records],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _jsonable_metrics(m: MetricBundle) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in m.as_dict().items()}


def config_digest(*parts) -> str:
    """SHA-256 of the canonical JSON encoding of one or more config dataclasses."""
    blob = json.dumps([asdict(p) if hasattr(p, "__dataclass_fields__") else p for p in parts],
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def sub_seed(seed: int, *tags: int) -> int:
    """Derive an independent 63-bit seed from ``seed`` and integer tags via SeedSequence."""
    state = np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def _sample_pairs(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    ii, jj = np.triu_indices(n, 1)
    if len(ii) <= k:
        return np.column_stack([ii, jj])
    pick = np.sort(rng.choice(len(ii), size=k, replace=False))
    return np.column_stack([ii[pick], jj[pick]])


def init_sim(config: SimConfig, pop: AgentPopulation, seed: int) -> SimState:
    config.validate()
    if len(pop) == 0:
        raise ConfigError("population is empty")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    n = len(pop)
    pairs = _sample_pairs(n, config.rho_pairs, rng)
    return SimState(
        config=config,
        population=pop,
        rng=rng,
        t=0,
        p=float(config.p0),
        v=float(config.v0),
        positions=np.zeros(n),
        pending=np.zeros(n),
        pause=np.zeros(n, dtype=int),
        outage_timer=np.zeros(len(pop.vendor_shares), dtype=int),
        prices=[float(config.p0)],
        pairs=pairs,
        A=pop.column("A"),
        H=pop.column("H"),
        C=pop.column("C"),
        S=pop.column("S"),
        vendor=pop.column("vendor_id").astype(int),
        weights=pop.column("weight"),
        limits=pop.column("position_limit"),
    )


def _stress(prices: list[float], window: int) -> float:
    # population std of the last `window` price changes; plain floats beat numpy at this size
    tail = prices[-(window + 1):]
    changes = [b - a for a, b in zip(tail, tail[1:])]
    n = len(changes)
    if n < 2:
        return 0.0
    mean = sum(changes) / n
    return math.sqrt(sum((c - mean) ** 2 for c in changes) / n)


def advance_environment(state: SimState) -> EnvSnapshot:
    cfg = state.config
    if state.t >= cfg.horizon:
        raise ContractError("simulation horizon reached")
    rng = state.rng
    zeta, u_jump, jump_size, eta, xi = (
        rng.standard_normal(), rng.random(), rng.standard_normal(),
        rng.standard_normal(), rng.standard_normal(),
    )
    news = cfg.sigma_jump * jump_size if u_jump < cfg.jump_prob else 0.0
    state.v = state.v + cfg.sigma_v * zeta + news
    s = state.v + cfg.sigma_s * eta
    m = cfg.sigma_m * xi

    u_out = rng.random(len(state.outage_timer))
    timer = np.maximum(state.outage_timer - 1, 0)
    fails = (timer == 0) & (u_out < cfg.outage_prob)
    timer[fails] = cfg.outage_duration
    state.outage_timer = timer

    Z = _stress(state.prices, cfg.stress_window)
    D = max(cfg.depth_floor, cfg.depth0 * math.exp(-cfg.gamma * Z))
    env = EnvSnapshot(
        t=state.t, v=state.v, s=s, m=m, news=news, Z=Z, D=D,
        failed_vendors=frozenset(int(k) for k in np.flatnonzero(timer > 0)),
    )
    state.env = env
    return env


def beliefs(H, env: EnvSnapshot, idio, sigma_m: float) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    return env.v + np.sqrt(1.0 - H) * env.m + np.sqrt(H) * sigma_m * np.asarray(idio, dtype=float)


def form_belief(agent: AgentSpec, env: EnvSnapshot, idio: float, *, sigma_m: float) -> float:
    return float(beliefs(agent.H, env, idio, sigma_m))


def decisions(C, belief, env: EnvSnapshot, price: float, *, kappa: float, theta: float):
    """Vectorised demand; returns ``(d, trigger_active)``."""
    C = np.asarray(C, dtype=float)
    gap = env.s - price
    trigger = abs(gap) >= theta
    coupled = kappa * gap if trigger else 0.0
    d = (1.0 - C) * kappa * (np.asarray(belief, dtype=float) - price) + C * coupled
    return d, trigger


def decide(agent: AgentSpec, belief: float, env: EnvSnapshot, price: float, *,
           kappa: float, theta: float) -> DecisionObject:
    d, trigger = decisions(agent.C, belief, env, price, kappa=kappa, theta=theta)
    return DecisionObject(agent_id=agent.id, d=float(d), trigger_active=bool(trigger), belief=float(belief))


def control_kernel(cfg: SimConfig, *, A, S, d, positions, pending, pause, failed, Z, limits, u):
    """Vectorised execution-control map.

    ``failed`` flags agents whose vendor is down; ``u`` holds three rows of
    uniforms (freeze, flatten, approval).  Returns ``(q, status, pending, pause)``
    with new arrays; inputs are not modified.
    """
    n = len(A)
    q = np.zeros(n)
    status = np.full(n, EXECUTED, dtype=np.int8)
    pending = np.array(pending, dtype=float)
    pause = np.array(pause, dtype=int)

    frozen = failed & (u[0] < S)
    unwind = failed & ~frozen
    q[unwind] = -cfg.unwind_rate * positions[unwind]
    status[frozen] = FROZEN_SAFE
    status[unwind] = FORCED_UNWIND

    healthy = ~failed
    paused = healthy & (pause > 0)
    status[paused] = PAUSED
    pause[paused] -= 1

    active = healthy & ~paused
    if Z > cfg.stress_threshold:
        flatten = active & (u[1] < S)
        q[flatten] = -cfg.flatten_fraction * positions[flatten]
        status[flatten] = FORCED_UNWIND
        pause[flatten] = cfg.pause_steps
        pending[flatten] = 0.0
        active &= ~flatten

    raw = A * (d + pending)
    delay = active & (u[2] < 1.0 - A)
    go = active & ~delay
    pending[delay] = raw[delay]
    status[delay] = DELAYED
    q[go] = np.clip(raw[go], -limits[go] - positions[go], limits[go] - positions[go])
    pending[go] = 0.0
    return q, status, pending, pause


def apply_controls(agent: AgentSpec, decision: DecisionObject, state: SimState,
                   env: EnvSnapshot, u=None) -> RealizedAction:
    """Single-agent control map.

    Updates the agent's pending-trade slot and pause counter in ``state``;
    positions are left to the caller.  ``u`` (three uniforms) defaults to fresh
    draws from the run stream.
    """
    if decision.agent_id != agent.id:
        raise ContractError("decision does not belong to agent")
    i = agent.id
    u = state.rng.random(3) if u is None else np.asarray(u, dtype=float)
    q, status, pending, pause = control_kernel(
        state.config,
        A=np.array([agent.A]), S=np.array([agent.S]), d=np.array([decision.d]),
        positions=state.positions[i:i + 1], pending=state.pending[i:i + 1],
        pause=state.pause[i:i + 1],
        failed=np.array([agent.vendor_id in env.failed_vendors]),
        Z=env.Z, limits=np.array([agent.position_limit]), u=u.reshape(3, 1),
    )
    state.pending[i] = pending[0]
    state.pause[i] = pause[0]
    return RealizedAction(agent_id=i, q=float(q[0]), status=STATUSES[status[0]])


def aggregate_actions(actions, weights) -> float:
    qs = np.array([a.q if isinstance(a, RealizedAction) else a for a in actions], dtype=float)
    w = np.asarray(weights, dtype=float)
    if qs.shape != w.shape:
        raise ContractError(f"{qs.size} actions vs {w.size} weights")
    return float(np.dot(w, qs))


def update_price(p: float, Q: float, D: float) -> float:
    if not D > 0:
        raise ContractError(f"depth must be positive, got {D}")
    return p + Q / D


def step(state: SimState) -> StepRecord:
    cfg = state.config
    env = advance_environment(state)
    n = len(state.positions)
    idio = state.rng.standard_normal(n)
    u = state.rng.random((3, n))

    b = beliefs(state.H, env, idio, cfg.sigma_m)
    d, _ = decisions(state.C, b, env, state.p, kappa=cfg.kappa, theta=cfg.theta)
    failed = np.isin(state.vendor, list(env.failed_vendors)) if env.failed_vendors else np.zeros(n, bool)
    q, status, pending, pause = control_kernel(
        cfg, A=state.A, S=state.S, d=d, positions=state.positions, pending=state.pending,
        pause=state.pause, failed=failed, Z=env.Z, limits=state.limits, u=u,
    )
    Q = float(np.dot(state.weights, q))
    p_next = update_price(state.p, Q, env.D)
    counts = tuple(int(c) for c in np.bincount(status, minlength=len(STATUSES)))
    record = StepRecord(t=state.t, p=state.p, v=env.v, s=env.s, Q=Q, D=env.D, Z=env.Z,
                        news=env.news, q=q, counts=counts)

    state.positions = np.clip(state.positions + q, -state.limits, state.limits)
    state.pending = pending
    state.pause = pause
    state.p = p_next
    state.prices.append(p_next)
    state.t += 1
    return record


def compute_metrics(records: list[StepRecord], config: SimConfig, pairs) -> MetricBundle:
    p = np.array([r.p for r in records])
    v = np.array([r.v for r in records])
    D = np.array([r.D for r in records])
    dp = np.diff(p)
    if dp.size >= 2:
        vol = realized_volatility(dp)
        es = expected_shortfall(dp, config.es_tail)
    else:
        vol, es = 0.0, 0.0
    q = np.array([r.q for r in records])
    rho = action_similarity(q, config.rho_window, pairs).rho
    return MetricBundle(
        pricing_error_rmse=pricing_error(p, v),
        volatility=vol,
        liquidity_level=liquidity_level(D, config.depth0) if config.depth0 > 0 else 1.0,
        expected_shortfall=es,
        mean_rho=float(rho.mean()) if rho.size else float("nan"),
    )


def simulate_run(config: SimConfig, pop_config: PopulationConfig, seed: int) -> SimResult:
    config.validate()
    pop_config.validate()
    pop = build_population(pop_config, sub_seed(seed, 0))
    state = init_sim(config, pop, sub_seed(seed, 1))
    records = []
    for _ in range(config.horizon):
        rec = step(state)
        if rec.t >= config.burn_in:
            records.append(rec)
    metrics = compute_metrics(records, config, state.pairs)
    manifest = {"seed": int(seed), "config_digest": config_digest(config, pop_config)}
    return SimResult(records=records, metrics=metrics, manifest=manifest, population=pop)
