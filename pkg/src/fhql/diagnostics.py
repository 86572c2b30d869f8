"""Numerical checks of the mean-field ODE behind finite-horizon Q-learning.

The learner is a stochastic approximation Q <- Q + a(m) (h(Q) + M), so its
behaviour is governed by the mean field h, the scaled limit field h_inf and
the noise M. The functions here evaluate those objects on concrete tables
and probe the properties the convergence argument needs: Lipschitz bounds,
stable equilibria at Q* and at the origin, and zero-mean noise with a
second moment growing at most quadratically in the table norm.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import dp
from .learner import TransitionSampler
from .mdp import FiniteHorizonMdp, check_q_shape, masked_min, terminal_q

H = "h"
H_INFINITY = "h_infinity"
LIPSCHITZ_TARGET = 2.0


def h_field(mdp: FiniteHorizonMdp, q: np.ndarray) -> np.ndarray:
    q = check_q_shape(mdp, q)
    out = np.zeros(mdp.q_shape)
    out[:-1] = np.where(mdp.feasible, dp.backup(mdp, q) - q[:-1], 0.0)
    return out


def h_infinity_field(mdp: FiniteHorizonMdp, q: np.ndarray) -> np.ndarray:
    q = check_q_shape(mdp, q)
    next_min = masked_min(q[1:], mdp.feasible)
    drift = np.einsum("nsaj,nj->nsa", mdp.transition, next_min) - q[:-1]
    out = np.zeros(mdp.q_shape)
    out[:-1] = np.where(mdp.feasible, drift, 0.0)
    return out


def field(mdp, q, kind):
    if kind == H:
        return h_field(mdp, q)
    if kind == H_INFINITY:
        return h_infinity_field(mdp, q)
    raise ValueError(f"unknown field kind {kind!r}")


def _sup(x, feasible):
    return float(np.abs(np.where(feasible, x, 0.0)).max())


@dataclass
class FieldProbeReport:
    field_kind: str
    max_ratio: float
    trials: int
    radius: float

    @property
    def passed(self) -> bool:
        return self.max_ratio <= LIPSCHITZ_TARGET + 1e-9

    def to_dict(self):
        return {**asdict(self), "bound": LIPSCHITZ_TARGET, "passed": self.passed}


def random_table(mdp, radius, rng):
    """Uniform draw from the sup-norm ball, zero at infeasible pairs."""
    q = rng.uniform(-radius, radius, size=mdp.q_shape)
    return np.where(mdp.feasible, q, 0.0)


def lipschitz_probe(mdp: FiniteHorizonMdp, field_kind: str, trials: int, radius: float,
                    rng: np.random.Generator) -> FieldProbeReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    best = 0.0
    done = 0
    while done < trials:
        q1 = random_table(mdp, radius, rng)
        q2 = random_table(mdp, radius, rng)
        gap = _sup(q1 - q2, mdp.feasible)
        if gap == 0.0:
            continue
        diff = field(mdp, q1, field_kind) - field(mdp, q2, field_kind)
        best = max(best, _sup(diff, mdp.feasible) / gap)
        done += 1
    return FieldProbeReport(field_kind, best, trials, float(radius))


def euler_flow(mdp: FiniteHorizonMdp, q0: np.ndarray, field_kind: str, dt: float,
               steps: int, target: np.ndarray = None):
    """Explicit Euler integration of dQ/dt = field(Q).

    Returns the final table and the sup-norm distance to ``target`` after
    every step. The default target is Q* for h and the origin for h_inf.
    """
    if not 0 < dt <= 1:
        raise ValueError("dt must lie in (0, 1]")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    q = check_q_shape(mdp, q0).copy()
    if target is None:
        target = dp.solve(mdp) if field_kind == H else np.zeros(mdp.q_shape)
    distances = np.empty(steps)
    for k in range(steps):
        q = q + dt * field(mdp, q, field_kind)
        distances[k] = _sup(q - target, mdp.feasible)
    return q, distances


def flow_start(mdp, field_kind, radius, rng):
    """Random start in the ball with the terminal layer on its invariant value.

    Both fields vanish on the terminal layer, so the flow can only reach its
    equilibrium from starts whose terminal layer already agrees with it.
    """
    q = random_table(mdp, radius, rng)
    q[-1] = terminal_q(mdp) if field_kind == H else 0.0
    return q


@dataclass
class NoiseProbeReport:
    mean: np.ndarray
    second_moment: np.ndarray
    std: np.ndarray
    samples: int
    q_norm: float
    cost_bound: float
    bound_constant: float
    mean_failures: int
    components: int

    @property
    def moment_bound(self) -> float:
        return self.bound_constant * (1.0 + self.q_norm**2)

    @property
    def allowed_failures(self) -> int:
        return max(1, math.ceil(self.components / 10**4)) if self.components else 0

    @property
    def moment_ok(self) -> bool:
        return bool((self.second_moment <= self.moment_bound).all())

    @property
    def passed(self) -> bool:
        return self.moment_ok and self.mean_failures <= self.allowed_failures

    def to_dict(self):
        return {
            "samples": self.samples,
            "components": self.components,
            "q_norm": self.q_norm,
            "cost_bound": self.cost_bound,
            "bound_constant": self.bound_constant,
            "moment_bound": self.moment_bound,
            "max_second_moment": float(self.second_moment.max()),
            "max_abs_mean": float(np.abs(self.mean).max()),
            "mean_failures": self.mean_failures,
            "allowed_failures": self.allowed_failures,
            "passed": self.passed,
        }


def martingale_noise_probe(mdp: FiniteHorizonMdp, q: np.ndarray, samples: int,
                           rng: np.random.Generator, chunk: int = 1000) -> NoiseProbeReport:
    """Empirical moments of M = sampled backup - exact backup, per (n, i, a).

    The terminal layer carries no noise and is reported as exact zeros.
    """
    if samples < 100:
        raise ValueError("samples must be >= 100")
    q = check_q_shape(mdp, q)
    sampler = TransitionSampler(mdp)
    next_min = masked_min(q[1:], mdp.feasible)
    exact = dp.backup(mdp, q)
    stages = np.arange(mdp.horizon)[:, None, None]
    total = np.zeros(sampler.shape)
    total_sq = np.zeros(sampler.shape)
    left = samples
    while left:
        k = min(chunk, left)
        for _ in range(k):
            j = sampler.draw(rng.random(sampler.shape))
            g = np.take_along_axis(mdp.stage_cost, j[..., None], axis=-1)[..., 0]
            noise = np.where(mdp.feasible, g + next_min[stages, j] - exact, 0.0)
            total += noise
            total_sq += noise * noise
        left -= k
    mean = np.zeros(mdp.q_shape)
    second = np.zeros(mdp.q_shape)
    mean[:-1] = total / samples
    second[:-1] = total_sq / samples
    std = np.sqrt(np.maximum(second - mean**2, 0.0))
    feas = np.broadcast_to(mdp.feasible, mdp.q_shape)
    failures = int((feas & (np.abs(mean) > 4.0 * std / math.sqrt(samples))).sum())
    cost_bound = float(np.abs(np.where(feas[:-1, :, :, None], mdp.stage_cost, 0.0)).max())
    return NoiseProbeReport(
        mean=mean, second_moment=second, std=std, samples=samples,
        q_norm=_sup(q, mdp.feasible), cost_bound=cost_bound,
        bound_constant=2.0 * (cost_bound + 1.0) ** 2 + 2.0,
        mean_failures=failures, components=int(feas.sum()),
    )


def scaled_field_gap(mdp: FiniteHorizonMdp, q: np.ndarray, r: float) -> float:
    """|| h(r q) / r - h_inf(q) ||_inf, which decays like 1 / r."""
    return _sup(h_field(mdp, r * q) / r - h_infinity_field(mdp, q), mdp.feasible)
