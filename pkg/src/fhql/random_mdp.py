"""Seeded random finite-horizon MDP instances."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .mdp import FiniteHorizonMdp

# (N, |S|, |A|) grid of the reference experiments
BENCHMARK_SETTINGS = ((20, 50, 10), (20, 20, 10), (10, 20, 10), (10, 5, 5))


@dataclass(frozen=True)
class RandomMdpSpec:
    horizon: int
    num_states: int
    num_actions: int
    cost_low: float = 0.0
    cost_high: float = 1.0
    terminal_cost_low: float = 0.0
    terminal_cost_high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.horizon, self.num_states, self.num_actions) < 1:
            raise ValueError("horizon, num_states and num_actions must be >= 1")
        if self.cost_low > self.cost_high:
            raise ValueError("cost_low > cost_high")
        if self.terminal_cost_low > self.terminal_cost_high:
            raise ValueError("terminal_cost_low > terminal_cost_high")

    @property
    def setting(self) -> tuple:
        return (self.horizon, self.num_states, self.num_actions)

    def to_dict(self) -> dict:
        return asdict(self)


def generate(spec: RandomMdpSpec) -> FiniteHorizonMdp:
    """Flat-Dirichlet kernel rows and uniform costs, all actions feasible."""
    rng = np.random.default_rng(spec.seed)
    shape = (spec.horizon, spec.num_states, spec.num_actions, spec.num_states)
    weights = rng.standard_exponential(shape)
    kernel = weights / weights.sum(axis=-1, keepdims=True)
    kernel /= kernel.sum(axis=-1, keepdims=True)
    stage_cost = rng.uniform(spec.cost_low, spec.cost_high, size=shape)
    terminal = rng.uniform(spec.terminal_cost_low, spec.terminal_cost_high, size=spec.num_states)
    feasible = np.ones((spec.num_states, spec.num_actions), dtype=bool)
    return FiniteHorizonMdp(kernel, stage_cost, terminal, feasible)
