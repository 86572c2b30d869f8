"""Microgrid energy management as a finite-horizon MDP.

State (d, b, p): customer demand, battery level and unit price, all integer
levels. Action (u1, u2): units bought from the main grid and units drawn
from the battery. Renewable generation r is exogenous i.i.d. noise added to
the battery each stage; it is not part of the state.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mdp import FiniteHorizonMdp

MAX_STATES = 10**5
FILL_DEMAND = "fill_demand"
FILL_BATTERY = "fill_battery"


def lazy_random_walk(levels: int) -> np.ndarray:
    """Stay with prob 1/2, step +-1 with prob 1/4 each, reflecting at the ends."""
    size = levels + 1
    chain = np.zeros((size, size))
    if size == 1:
        chain[0, 0] = 1.0
        return chain
    for s in range(size):
        chain[s, s] += 0.5
        for step in (-1, 1):
            t = s + step
            if t < 0 or t > levels:
                t = s - step
            chain[s, t] += 0.25
    return chain


@dataclass(frozen=True)
class GridState:
    d: int
    b: int
    p: int


@dataclass(frozen=True)
class GridAction:
    u1: int
    u2: int


@dataclass(frozen=True)
class GridConfig:
    d_max: int = 4
    b_max: int = 4
    p_max: int = 4
    r_max: Optional[int] = None
    u1_max: Optional[int] = None
    c: float = 1.0
    horizon: int = 10
    demand_chain: Optional[np.ndarray] = None
    price_chain: Optional[np.ndarray] = None
    renewable_dist: Optional[np.ndarray] = None
    renewables_enabled: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("d_max", "b_max", "p_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        r_max = self.d_max if self.r_max is None else self.r_max
        u1_max = self.d_max + self.b_max if self.u1_max is None else self.u1_max
        if r_max < 0 or u1_max < 0:
            raise ValueError("r_max and u1_max must be nonnegative")
        object.__setattr__(self, "r_max", int(r_max))
        object.__setattr__(self, "u1_max", int(u1_max))
        demand = lazy_random_walk(self.d_max) if self.demand_chain is None else self.demand_chain
        price = lazy_random_walk(self.p_max) if self.price_chain is None else self.price_chain
        renew = (np.full(r_max + 1, 1.0 / (r_max + 1)) if self.renewable_dist is None
                 else self.renewable_dist)
        demand = _stochastic(demand, (self.d_max + 1, self.d_max + 1), "demand_chain")
        price = _stochastic(price, (self.p_max + 1, self.p_max + 1), "price_chain")
        renew = _stochastic(renew, (r_max + 1,), "renewable_dist")
        object.__setattr__(self, "demand_chain", demand)
        object.__setattr__(self, "price_chain", price)
        object.__setattr__(self, "renewable_dist", renew)

    @property
    def u2_max(self) -> int:
        return min(self.d_max, self.b_max)

    @property
    def num_states(self) -> int:
        return (self.d_max + 1) * (self.b_max + 1) * (self.p_max + 1)

    @property
    def num_actions(self) -> int:
        return (self.u1_max + 1) * (self.u2_max + 1)

    @property
    def effective_renewables(self) -> np.ndarray:
        """Renewable distribution in force: a point mass at 0 when disabled."""
        if self.renewables_enabled:
            return self.renewable_dist
        dist = np.zeros_like(self.renewable_dist)
        dist[0] = 1.0
        return dist

    def with_renewables(self, enabled: bool) -> "GridConfig":
        return GridConfig(**{**self._fields(), "renewables_enabled": enabled})

    def _fields(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_dict(self) -> dict:
        out = self._fields()
        for k in ("demand_chain", "price_chain", "renewable_dist"):
            out[k] = out[k].tolist()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "GridConfig":
        doc = dict(doc)
        for k in ("demand_chain", "price_chain", "renewable_dist"):
            if doc.get(k) is not None:
                doc[k] = np.asarray(doc[k], dtype=float)
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "GridConfig":
        return cls.from_dict(json.loads(text))

    # index maps between grid objects and the flat MDP encoding
    def state_index(self, s: GridState) -> int:
        return (s.d * (self.b_max + 1) + s.b) * (self.p_max + 1) + s.p

    def decode_state(self, index: int) -> GridState:
        rest, p = divmod(int(index), self.p_max + 1)
        d, b = divmod(rest, self.b_max + 1)
        return GridState(d, b, p)

    def action_index(self, a: GridAction) -> int:
        return a.u1 * (self.u2_max + 1) + a.u2

    def decode_action(self, index: int) -> GridAction:
        u1, u2 = divmod(int(index), self.u2_max + 1)
        return GridAction(u1, u2)


def _stochastic(arr, shape, name):
    arr = np.array(arr, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    if (arr < 0).any() or not np.allclose(arr.sum(axis=-1), 1.0, rtol=0, atol=1e-9):
        raise ValueError(f"{name} must be nonnegative with rows summing to 1")
    arr.flags.writeable = False
    return arr


def _check_state(config, s):
    if not (0 <= s.d <= config.d_max and 0 <= s.b <= config.b_max and 0 <= s.p <= config.p_max):
        raise ValueError(f"state {s} outside the grid")


def is_feasible(config: GridConfig, s: GridState, a: GridAction) -> bool:
    return 0 <= a.u1 <= config.u1_max and 0 <= a.u2 <= min(s.b, s.d)


def feasible_actions(config: GridConfig, state: GridState) -> list:
    _check_state(config, state)
    return [GridAction(u1, u2) for u1 in range(config.u1_max + 1)
            for u2 in range(min(state.b, state.d) + 1)]


def stage_cost(config: GridConfig, state: GridState, action: GridAction) -> float:
    """c (d - u2) + p u1: demand not served from the battery plus purchases."""
    if not is_feasible(config, state, action):
        raise ValueError(f"infeasible action {action} in {state}")
    return config.c * (state.d - action.u2) + state.p * action.u1


def _inverse_cdf(rows, u):
    cdf = np.cumsum(rows, axis=-1)
    cdf[..., -1] = 1.0
    return (cdf <= u[..., None]).sum(axis=-1)


def _step(config, d, b, p, u1, u2, uniforms):
    """Vectorised dynamics; ``uniforms`` has a trailing axis of 3 (demand,
    renewable, price) so every policy sees the same exogenous path."""
    d_next = _inverse_cdf(config.demand_chain[d], uniforms[..., 0])
    r = _inverse_cdf(np.broadcast_to(config.effective_renewables, np.shape(d) + (config.r_max + 1,)),
                     uniforms[..., 1])
    battery = b + u1
    battery = battery - u2
    battery = battery + r
    battery = np.minimum(battery, config.b_max)
    battery = np.maximum(battery, 0)
    p_next = _inverse_cdf(config.price_chain[p], uniforms[..., 2])
    return d_next, battery, p_next


def transition(config: GridConfig, state: GridState, action: GridAction,
               rng: np.random.Generator) -> GridState:
    if not is_feasible(config, state, action):
        raise ValueError(f"infeasible action {action} in {state}")
    d, b, p = _step(config, np.asarray(state.d), np.asarray(state.b), np.asarray(state.p),
                    action.u1, action.u2, rng.random(3))
    return GridState(int(d), int(b), int(p))


def fill_demand_policy(state: GridState, config: Optional[GridConfig] = None) -> GridAction:
    u1 = max(state.d - state.b, 0)
    if config is not None:
        u1 = min(u1, config.u1_max)
    return GridAction(u1, min(state.d, state.b))


def fill_battery_policy(config: GridConfig, state: GridState) -> GridAction:
    u1 = min(state.d + (config.b_max - state.b), config.u1_max)
    return GridAction(u1, min(state.d, state.b))


def _state_grid(config):
    d, b, p = np.meshgrid(np.arange(config.d_max + 1), np.arange(config.b_max + 1),
                          np.arange(config.p_max + 1), indexing="ij")
    return d.ravel(), b.ravel(), p.ravel()


def _action_grid(config):
    u1, u2 = np.meshgrid(np.arange(config.u1_max + 1), np.arange(config.u2_max + 1), indexing="ij")
    return u1.ravel(), u2.ravel()


def to_mdp(config: GridConfig) -> FiniteHorizonMdp:
    """Exact compilation; the kernel and costs are shared by every stage."""
    if config.num_states > MAX_STATES:
        raise ValueError(f"{config.num_states} states exceeds the limit of {MAX_STATES}")
    D, B, P = config.d_max + 1, config.b_max + 1, config.p_max + 1
    d, b, p = _state_grid(config)
    u1, u2 = _action_grid(config)
    feasible = u2[None, :] <= np.minimum(b, d)[:, None]
    renew = config.effective_renewables

    # battery distribution for every (state, action): (S, A, B)
    battery = np.zeros((d.size, u1.size, B))
    for r, weight in enumerate(renew):
        if weight == 0:
            continue
        level = np.clip(b[:, None] + u1[None, :] - u2[None, :] + r, 0, config.b_max)
        rows, cols = np.indices(level.shape)
        np.add.at(battery, (rows, cols, level), weight)
    kernel = np.einsum("sx,sau,sy->saxuy", config.demand_chain[d], battery,
                       config.price_chain[p]).reshape(d.size, u1.size, -1)
    kernel = np.where(feasible[..., None], kernel, 0.0)
    cost = config.c * (d[:, None] - u2[None, :]) + p[:, None] * u1[None, :]
    cost = np.where(feasible, cost, 0.0).astype(float)
    shape = (config.horizon,) + kernel.shape
    kernel_n = np.broadcast_to(kernel, shape)
    cost_n = np.broadcast_to(cost[..., None], shape)
    return FiniteHorizonMdp(kernel_n, cost_n, np.zeros(d.size), feasible)


def _baseline_actions(config, kind, d, b):
    u2 = np.minimum(d, b)
    if kind == FILL_DEMAND:
        u1 = np.maximum(d - b, 0)
    elif kind == FILL_BATTERY:
        u1 = d + (config.b_max - b)
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    return np.minimum(u1, config.u1_max), u2


def evaluate_average_cost(config: GridConfig, policy, episodes: int,
                          rng: np.random.Generator) -> tuple:
    """Mean per-stage cost over simulated episodes and its standard error.

    ``policy`` is "fill_demand", "fill_battery" or an (N, S) array of flat
    action indices as returned by ``greedy_policy`` on ``to_mdp(config)``.
    Episodes start from a uniformly random state.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    start = rng.integers(0, config.num_states, size=episodes)
    uniforms = rng.random((config.horizon, episodes, 3))
    d, b, p = (np.asarray(x) for x in _state_grid(config))
    d, b, p = d[start], b[start], p[start]
    costs = np.zeros(episodes)
    table = None if isinstance(policy, str) else np.asarray(policy)
    for n in range(config.horizon):
        if table is None:
            u1, u2 = _baseline_actions(config, policy, d, b)
        else:
            s = (d * (config.b_max + 1) + b) * (config.p_max + 1) + p
            u1, u2 = np.divmod(table[n, s], config.u2_max + 1)
            if (u2 > np.minimum(b, d)).any() or (u1 > config.u1_max).any():
                raise ValueError("policy selects an infeasible action")
        costs += config.c * (d - u2) + p * u1
        d, b, p = _step(config, d, b, p, u1, u2, uniforms[n])
    per_stage = costs / config.horizon
    mean = float(per_stage.mean())
    err = float(per_stage.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else 0.0
    return mean, err
