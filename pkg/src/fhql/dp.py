"""Backward-induction dynamic programming in Q-values."""
from __future__ import annotations

import numpy as np

from .mdp import (FiniteHorizonMdp, check_q_shape, expected_stage_cost, masked_min,
                  terminal_q, validate)


def backup(mdp: FiniteHorizonMdp, q: np.ndarray) -> np.ndarray:
    """One exact Bellman backup of every non-terminal layer.

    Returns an (N, S, A) array holding
    sum_j p_n(i,a,j) (g_n(i,a,j) + min_{b in A(j)} Q_{n+1}(j,b)),
    zero at infeasible pairs.
    """
    q = check_q_shape(mdp, q)
    next_min = masked_min(q[1:], mdp.feasible)
    out = expected_stage_cost(mdp) + np.einsum("nsaj,nj->nsa", mdp.transition, next_min)
    return np.where(mdp.feasible, out, 0.0)


def solve(mdp: FiniteHorizonMdp) -> np.ndarray:
    report = validate(mdp)
    if report:
        raise ValueError(f"invalid MDP: {report[:5]}")
    ec = expected_stage_cost(mdp)
    q = np.zeros(mdp.q_shape)
    q[-1] = terminal_q(mdp)
    for k in range(mdp.horizon - 1, -1, -1):
        next_min = masked_min(q[k + 1], mdp.feasible)
        q[k] = np.where(mdp.feasible, ec[k] + mdp.transition[k] @ next_min, 0.0)
    return q


def bellman_residual(mdp: FiniteHorizonMdp, q: np.ndarray) -> float:
    """Sup-norm distance between ``q`` and its backup, terminal layer included."""
    q = check_q_shape(mdp, q)
    diff = np.empty(mdp.q_shape)
    diff[:-1] = q[:-1] - backup(mdp, q)
    diff[-1] = q[-1] - terminal_q(mdp)
    return float(np.abs(np.where(mdp.feasible, diff, 0.0)).max())
