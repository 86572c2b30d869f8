"""Finite-horizon MDP data model, policy evaluation and a brute-force oracle.

Array conventions used throughout the package:

    transition, stage_cost : (N, S, A, S)  indexed [n, i, a, j]
    terminal_cost          : (S,)
    feasible               : (S, A) bool, row i is the action set A(i)
    Q-table                : (N + 1, S, A); layer N is the terminal layer
    policy                 : (N, S) int, pi[n, i] in A(i)
    value function         : (N + 1, S)

Entries of a Q-table at infeasible (i, a) pairs carry no meaning; they are
kept at zero by every routine here and ignored by every norm and minimum.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

ROW_SUM_TOL = 1e-9
MAX_ENUMERATED_POLICIES = 10**7


@dataclass(frozen=True)
class FiniteHorizonMdp:
    transition: np.ndarray
    stage_cost: np.ndarray
    terminal_cost: np.ndarray
    feasible: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=float)
        g = np.asarray(self.stage_cost, dtype=float)
        gN = np.asarray(self.terminal_cost, dtype=float)
        feas = np.asarray(self.feasible, dtype=bool)
        if p.ndim != 4 or p.shape[1] != p.shape[3]:
            raise ValueError(f"transition must have shape (N, S, A, S), got {p.shape}")
        if g.shape != p.shape:
            raise ValueError(f"stage_cost shape {g.shape} != transition shape {p.shape}")
        if gN.shape != (p.shape[1],):
            raise ValueError(f"terminal_cost shape {gN.shape} != ({p.shape[1]},)")
        if feas.shape != p.shape[1:3]:
            raise ValueError(f"feasible shape {feas.shape} != {p.shape[1:3]}")
        for name, arr in (("transition", p), ("stage_cost", g),
                          ("terminal_cost", gN), ("feasible", feas)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def horizon(self) -> int:
        return self.transition.shape[0]

    @property
    def num_states(self) -> int:
        return self.transition.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[2]

    @property
    def q_shape(self) -> tuple:
        return (self.horizon + 1, self.num_states, self.num_actions)

    def action_sets(self) -> list:
        return [np.flatnonzero(row).tolist() for row in self.feasible]

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "num_states": self.num_states,
            "feasible_actions": self.action_sets(),
            "transition": self.transition.tolist(),
            "stage_cost": self.stage_cost.tolist(),
            "terminal_cost": self.terminal_cost.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "FiniteHorizonMdp":
        p = np.asarray(doc["transition"], dtype=float)
        num_states = int(doc["num_states"])
        num_actions = p.shape[2] if p.ndim == 4 else 0
        feas = np.zeros((num_states, num_actions), dtype=bool)
        for i, acts in enumerate(doc["feasible_actions"]):
            feas[i, list(acts)] = True
        mdp = cls(p, doc["stage_cost"], doc["terminal_cost"], feas)
        if mdp.horizon != int(doc["horizon"]) or mdp.num_states != num_states:
            raise ValueError("horizon/num_states disagree with array shapes")
        return mdp

    @classmethod
    def from_json(cls, text: str) -> "FiniteHorizonMdp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Violation:
    kind: str
    index: tuple
    detail: str = ""


def validate(mdp: FiniteHorizonMdp) -> list:
    """Return every invariant violation of ``mdp``; empty iff valid."""
    report = []
    if mdp.horizon < 1:
        report.append(Violation("horizon", (), f"N={mdp.horizon} < 1"))
    for i in np.flatnonzero(~mdp.feasible.any(axis=1)):
        report.append(Violation("empty_action_set", (int(i),)))
    feas = np.broadcast_to(mdp.feasible, mdp.transition.shape[:3])
    rows = mdp.transition.sum(axis=-1)
    negative = (mdp.transition < 0).any(axis=-1)
    for n, i, a in zip(*np.nonzero(feas & negative)):
        report.append(Violation("negative_probability", (int(n), int(i), int(a))))
    bad_sum = feas & ~(np.abs(rows - 1.0) <= ROW_SUM_TOL)
    for n, i, a in zip(*np.nonzero(bad_sum)):
        report.append(Violation("row_sum", (int(n), int(i), int(a)),
                                f"sum={rows[n, i, a]!r}"))
    nonfinite = feas & ~np.isfinite(mdp.stage_cost).all(axis=-1)
    for n, i, a in zip(*np.nonzero(nonfinite)):
        report.append(Violation("nonfinite_cost", (int(n), int(i), int(a))))
    for i in np.flatnonzero(~np.isfinite(mdp.terminal_cost)):
        report.append(Violation("nonfinite_terminal_cost", (int(i),)))
    return report


def check_q_shape(mdp: FiniteHorizonMdp, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != mdp.q_shape:
        raise ValueError(f"Q-table shape {q.shape} does not match MDP {mdp.q_shape}")
    return q


def masked_min(q: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    """Minimum over the last axis restricted to feasible actions."""
    return np.where(feasible, q, np.inf).min(axis=-1)


def terminal_q(mdp: FiniteHorizonMdp) -> np.ndarray:
    """Terminal layer Q_N(i, a) = g_N(i) on feasible pairs."""
    return np.where(mdp.feasible, mdp.terminal_cost[:, None], 0.0)


def greedy_policy(mdp: FiniteHorizonMdp, q: np.ndarray) -> np.ndarray:
    """Per-stage argmin over A(i); ties go to the lowest action index."""
    q = check_q_shape(mdp, q)
    return np.where(mdp.feasible, q[:-1], np.inf).argmin(axis=-1)


def q_to_value(mdp: FiniteHorizonMdp, q: np.ndarray) -> np.ndarray:
    q = check_q_shape(mdp, q)
    values = masked_min(q, mdp.feasible)
    values[-1] = mdp.terminal_cost
    return values


def check_policy(mdp: FiniteHorizonMdp, pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (mdp.horizon, mdp.num_states):
        raise ValueError(f"policy shape {pi.shape} != {(mdp.horizon, mdp.num_states)}")
    in_range = (pi >= 0) & (pi < mdp.num_actions)
    ok = in_range & mdp.feasible[np.arange(mdp.num_states), np.where(in_range, pi, 0)]
    if not ok.all():
        n, i = np.argwhere(~ok)[0]
        raise ValueError(f"infeasible action {pi[n, i]} at stage {n}, state {i}")
    return pi.astype(np.intp)


def expected_stage_cost(mdp: FiniteHorizonMdp) -> np.ndarray:
    """sum_j p_n(i,a,j) g_n(i,a,j), shape (N, S, A)."""
    return np.einsum("nsaj,nsaj->nsa", mdp.transition, mdp.stage_cost)


def policy_q_evaluation(mdp: FiniteHorizonMdp, pi: np.ndarray) -> np.ndarray:
    """Q-values of ``pi``: free first action at each stage, ``pi`` afterwards.

    pi[0] never enters the result, since the stage-0 action is the free
    argument of the table.
    """
    pi = check_policy(mdp, pi)
    ec = expected_stage_cost(mdp)
    states = np.arange(mdp.num_states)
    q = np.zeros(mdp.q_shape)
    q[-1] = terminal_q(mdp)
    follow = mdp.terminal_cost
    for n in range(mdp.horizon - 1, -1, -1):
        q[n] = np.where(mdp.feasible, ec[n] + mdp.transition[n] @ follow, 0.0)
        if n > 0:
            follow = q[n, states, pi[n]]
    return q


def count_policies(mdp: FiniteHorizonMdp) -> int:
    per_stage = int(np.prod(mdp.feasible.sum(axis=1), dtype=object))
    return per_stage ** mdp.horizon


def _batched_policy_q(mdp, ec, tails):
    """Evaluate a batch of policy tails; tails has shape (B, N - 1, S)."""
    batch = tails.shape[0]
    states = np.arange(mdp.num_states)
    follow = np.broadcast_to(mdp.terminal_cost, (batch, mdp.num_states))
    out = np.empty((batch,) + mdp.q_shape)
    out[:, -1] = terminal_q(mdp)
    for n in range(mdp.horizon - 1, -1, -1):
        # (B, S, A) = ec + sum_j p[n, i, a, j] * follow[b, j]
        layer = ec[n] + np.einsum("saj,bj->bsa", mdp.transition[n], follow)
        out[:, n] = np.where(mdp.feasible, layer, 0.0)
        if n > 0:
            follow = layer[np.arange(batch)[:, None], states, tails[:, n - 1]]
    return out


def brute_force_optimal_q(mdp: FiniteHorizonMdp, batch_size: int = 4096) -> np.ndarray:
    """Optimal Q-table by exhaustive search over nonstationary policies.

    Only stages 1..N-1 of a policy affect its Q-values, so the enumeration
    runs over those tails; the minimum is identical to the one over the
    full policy set, whose size is what the guard bounds.
    """
    total = count_policies(mdp)
    if total > MAX_ENUMERATED_POLICIES:
        raise ValueError(f"policy space has {total} policies, exceeds {MAX_ENUMERATED_POLICIES}")
    ec = expected_stage_cost(mdp)
    choices = [np.flatnonzero(row) for row in mdp.feasible] * (mdp.horizon - 1)
    best = np.full(mdp.q_shape, np.inf)
    combos = itertools.product(*choices)
    while True:
        chunk = list(itertools.islice(combos, batch_size))
        if not chunk:
            break
        tails = np.asarray(chunk, dtype=np.intp).reshape(len(chunk), mdp.horizon - 1, mdp.num_states)
        best = np.minimum(best, _batched_policy_q(mdp, ec, tails).min(axis=0))
    return np.where(np.broadcast_to(mdp.feasible, best.shape), best, 0.0)


def sup_norm(q: np.ndarray, feasible: Optional[np.ndarray] = None) -> float:
    q = np.asarray(q, dtype=float)
    if feasible is not None:
        q = np.where(feasible, q, 0.0)
    return float(np.abs(q).max()) if q.size else 0.0
