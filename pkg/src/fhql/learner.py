"""Finite-horizon Q-learning driven by a generative next-state sampler."""
from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .mdp import FiniteHorizonMdp, masked_min, terminal_q, validate

SYNCHRONOUS = "synchronous"
SINGLE_SAMPLE = "single_sample"


@dataclass(frozen=True)
class StepSchedule:
    block_length: int = 10

    def __post_init__(self):
        if self.block_length < 1:
            raise ValueError("block_length must be >= 1")


def step_size(m: int, schedule: StepSchedule = StepSchedule()) -> float:
    """a(m) = 1 / ceil((m + 1) / L): constant on blocks of L iterations."""
    return 1.0 / (m // schedule.block_length + 1)


def step_sizes(count: int, schedule: StepSchedule = StepSchedule()) -> np.ndarray:
    """Vectorised a(0), ..., a(count - 1)."""
    return 1.0 / (np.arange(count) // schedule.block_length + 1)


@dataclass(frozen=True)
class LearnerConfig:
    epsilon: float = 0.05
    max_iterations: int = 200_000
    schedule: StepSchedule = field(default_factory=StepSchedule)
    seed: int = 0
    trace_stride: int = 1
    update_mode: str = SYNCHRONOUS

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.trace_stride < 1:
            raise ValueError("trace_stride must be >= 1")
        if self.update_mode not in (SYNCHRONOUS, SINGLE_SAMPLE):
            raise ValueError(f"unknown update_mode {self.update_mode!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @classmethod
    def from_dict(cls, doc: dict) -> "LearnerConfig":
        doc = dict(doc)
        sched = doc.pop("schedule", None)
        if isinstance(sched, dict):
            doc["schedule"] = StepSchedule(**sched)
        elif sched is not None:
            doc["schedule"] = StepSchedule(int(sched))
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


class TransitionSampler:
    """Inverse-CDF sampling of next states for every (n, i, a) at once.

    Rows are compressed to their support so that sparse kernels are cheap.
    For a uniform draw u the chosen state is the first j with cdf(j) > u;
    the cumulative sum up to the last supported state is pinned to 1.
    Rows without support (infeasible pairs) map to state 0.
    """

    def __init__(self, mdp: FiniteHorizonMdp):
        p = mdp.transition
        self.shape = p.shape[:3]
        rows = p.reshape(-1, p.shape[-1])
        positive = rows > 0
        width = max(int(positive.sum(axis=1).max()), 1)
        # stable sort keeps the support in increasing state order
        order = np.argsort(~positive, axis=1, kind="stable")[:, :width]
        probs = np.where(np.take_along_axis(positive, order, axis=1),
                         np.take_along_axis(rows, order, axis=1), 0.0)
        cdf = np.cumsum(probs, axis=1)
        size = positive.sum(axis=1)
        cols = np.arange(width)
        cdf[cols >= (size - 1)[:, None]] = 1.0
        self.support = np.where(size[:, None] > 0, order, 0)
        self.cdf = cdf

    def draw(self, uniforms: np.ndarray) -> np.ndarray:
        """Map uniforms of shape (N, S, A) to next states of the same shape."""
        u = uniforms.reshape(-1, 1)
        k = (self.cdf <= u).sum(axis=1)
        return np.take_along_axis(self.support, k[:, None], axis=1).reshape(self.shape)


def sample_next_state(mdp: FiniteHorizonMdp, n: int, i: int, a: int,
                      rng: np.random.Generator) -> int:
    """Draw j ~ p_n(i, a, .) from one uniform of ``rng``."""
    if not mdp.feasible[i, a]:
        raise ValueError(f"action {a} infeasible in state {i}")
    if not 0 <= n < mdp.horizon:
        raise ValueError(f"stage {n} outside 0..{mdp.horizon - 1}")
    row = mdp.transition[n, i, a]
    support = np.flatnonzero(row > 0)
    cdf = np.cumsum(row[support])
    cdf[-1] = 1.0
    k = int(np.searchsorted(cdf, rng.random(), side="right"))
    return int(support[k])


def q_update(q_n_ia: float, q_next_row, g: float, alpha: float) -> float:
    return (1.0 - alpha) * q_n_ia + alpha * (g + float(np.min(q_next_row)))


def _initial_q(mdp: FiniteHorizonMdp) -> np.ndarray:
    q = np.zeros(mdp.q_shape)
    q[-1] = terminal_q(mdp)
    return q


def sweep(q: np.ndarray, mdp: FiniteHorizonMdp, m: int, config: LearnerConfig,
          rng: np.random.Generator, sampler: Optional[TransitionSampler] = None) -> np.ndarray:
    """One synchronous update of every (n, i, a) from the previous iterate.

    One uniform is consumed per (n, i, a) in C order, feasible or not, so a
    sweep draws exactly the states that repeated ``sample_next_state`` calls
    on the same stream would.
    """
    if sampler is None:
        sampler = TransitionSampler(mdp)
    alpha = step_size(m, config.schedule)
    j = sampler.draw(rng.random(sampler.shape))
    g = np.take_along_axis(mdp.stage_cost, j[..., None], axis=-1)[..., 0]
    next_min = masked_min(q[1:], mdp.feasible)
    stages = np.arange(mdp.horizon)[:, None, None]
    target = g + next_min[stages, j]
    out = np.empty_like(q)
    out[:-1] = np.where(mdp.feasible, (1.0 - alpha) * q[:-1] + alpha * target, 0.0)
    out[-1] = terminal_q(mdp)
    return out


@dataclass
class TrainingTrace:
    iterations: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)

    def record(self, m, delta, error, alpha):
        self.iterations.append(int(m))
        self.deltas.append(float(delta))
        self.errors.append(None if error is None else float(error))
        self.step_sizes.append(float(alpha))

    def __len__(self):
        return len(self.iterations)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,delta,error,step_size\n")
        for m, d, e, a in zip(self.iterations, self.deltas, self.errors, self.step_sizes):
            buf.write(f"{m},{d!r},{'' if e is None else repr(e)},{a!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainingTrace":
        trace = cls()
        for line in text.strip().splitlines()[1:]:
            m, d, e, a = line.split(",")
            trace.record(int(m), float(d), float(e) if e else None, float(a))
        return trace


@dataclass
class TrainResult:
    q: np.ndarray
    trace: TrainingTrace
    iterations: int
    converged: bool


def sup_error(q: np.ndarray, q_ref: np.ndarray) -> float:
    q = np.asarray(q, dtype=float)
    q_ref = np.asarray(q_ref, dtype=float)
    if q.shape != q_ref.shape:
        raise ValueError(f"shape mismatch {q.shape} vs {q_ref.shape}")
    return float(np.abs(q - q_ref).max()) if q.size else 0.0


def _single_sample_epoch(q, mdp, counts, config, rng, sampler):
    """N * (number of feasible pairs) asynchronous single-entry updates."""
    n_idx, i_idx, a_idx = np.nonzero(np.broadcast_to(mdp.feasible, sampler.shape))
    picks = rng.integers(0, n_idx.size, size=n_idx.size)
    uniforms = rng.random(n_idx.size)
    q = q.copy()
    for k, u in zip(picks, uniforms):
        n, i, a = n_idx[k], i_idx[k], a_idx[k]
        row = sampler.cdf[np.ravel_multi_index((n, i, a), sampler.shape)]
        j = sampler.support[np.ravel_multi_index((n, i, a), sampler.shape),
                            int(np.searchsorted(row, u, side="right"))]
        alpha = step_size(int(counts[n, i, a]), config.schedule)
        counts[n, i, a] += 1
        q[n, i, a] = q_update(q[n, i, a], q[n + 1, j][mdp.feasible[j]],
                              mdp.stage_cost[n, i, a, j], alpha)
    return q


def run(mdp: FiniteHorizonMdp, config: LearnerConfig, oracle: Optional[np.ndarray] = None,
        callback: Optional[Callable[[int, np.ndarray], None]] = None) -> TrainResult:
    """Iterate from the zero initialisation until the sup-norm change is <= epsilon.

    Iteration m of the trace refers to the table Q^m obtained from Q^{m-1}
    with step size a(m - 1). ``callback(m, q)`` sees every iterate.
    """
    report = validate(mdp)
    if report:
        raise ValueError(f"invalid MDP: {report[:5]}")
    rng = np.random.default_rng(config.seed)
    sampler = TransitionSampler(mdp)
    trace = TrainingTrace()
    counts = np.zeros(sampler.shape, dtype=np.int64)
    q = _initial_q(mdp)
    converged = False
    m = 0
    while m < config.max_iterations:
        if config.update_mode == SYNCHRONOUS:
            q_next = sweep(q, mdp, m, config, rng, sampler)
        else:
            q_next = _single_sample_epoch(q, mdp, counts, config, rng, sampler)
        delta = float(np.abs(q_next - q).max())
        alpha = step_size(m, config.schedule)
        m += 1
        q = q_next
        if callback is not None:
            callback(m, q)
        converged = delta <= config.epsilon
        if m % config.trace_stride == 0 or converged or m == config.max_iterations:
            error = None if oracle is None else sup_error(q, oracle)
            trace.record(m, delta, error, alpha)
        if converged:
            break
    return TrainResult(q=q, trace=trace, iterations=m, converged=converged)


def load_config(path) -> LearnerConfig:
    with open(path) as fh:
        return LearnerConfig.from_dict(json.load(fh))


def harmonic_witness(terms: int, schedule: StepSchedule = StepSchedule()) -> tuple:
    """Partial sums of a(m) and a(m)^2 over ``terms`` iterations, with the
    closed-form limit L * pi^2 / 6 of the squared series."""
    a = step_sizes(terms, schedule)
    return float(a.sum()), float(np.square(a).sum()), schedule.block_length * math.pi**2 / 6
