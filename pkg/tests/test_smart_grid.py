import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fhql import dp
from fhql import smart_grid as sg
from fhql.mdp import greedy_policy, validate
from fhql.smart_grid import GridAction, GridConfig, GridState


def identity_config(**kw):
    base = dict(d_max=2, b_max=3, p_max=2, horizon=3)
    base.update(kw)
    return GridConfig(demand_chain=np.eye(base["d_max"] + 1),
                      price_chain=np.eye(base["p_max"] + 1), **base)


def test_defaults():
    cfg = GridConfig()
    assert (cfg.u1_max, cfg.r_max, cfg.c) == (8, 4, 1.0)
    np.testing.assert_allclose(cfg.demand_chain.sum(axis=1), 1.0)
    np.testing.assert_allclose(cfg.demand_chain[0], [0.5, 0.5, 0, 0, 0])
    np.testing.assert_allclose(cfg.demand_chain[2], [0, 0.25, 0.5, 0.25, 0])
    np.testing.assert_allclose(cfg.renewable_dist, np.full(5, 0.2))


def test_config_rejects_bad_chain():
    with pytest.raises(ValueError):
        GridConfig(d_max=1, demand_chain=np.array([[0.5, 0.4], [0, 1]]))


def test_config_json_round_trip():
    cfg = GridConfig(d_max=2, b_max=1, p_max=3, renewables_enabled=True, seed=5)
    assert GridConfig.from_json(__import__("json").dumps(cfg.to_dict())).to_dict() == cfg.to_dict()


def test_feasible_actions():
    cfg = GridConfig()
    assert all(a.u2 == 0 for a in sg.feasible_actions(cfg, GridState(3, 0, 1)))
    assert all(a.u2 == 0 for a in sg.feasible_actions(cfg, GridState(0, 3, 1)))
    cfg4 = GridConfig(u1_max=4)
    assert len(sg.feasible_actions(cfg4, GridState(4, 2, 0))) == 15
    assert GridAction(0, 0) in sg.feasible_actions(cfg, GridState(0, 0, 0))


def test_stage_cost_examples():
    cfg = GridConfig()
    assert sg.stage_cost(cfg, GridState(4, 4, 2), GridAction(0, 4)) == 0
    assert sg.stage_cost(cfg, GridState(4, 0, 3), GridAction(2, 0)) == 10
    with pytest.raises(ValueError):
        sg.stage_cost(cfg, GridState(1, 3, 0), GridAction(0, 2))


@settings(max_examples=100, deadline=None)
@given(d=st.integers(0, 4), b=st.integers(0, 4), p=st.integers(0, 4), u1=st.integers(0, 8),
       u2=st.integers(0, 4))
def test_cost_nonnegative_and_battery_in_range(d, b, p, u1, u2):
    cfg = GridConfig(renewables_enabled=True)
    s, a = GridState(d, b, p), GridAction(u1, min(u2, b, d))
    assert sg.stage_cost(cfg, s, a) >= 0
    nxt = sg.transition(cfg, s, a, np.random.default_rng(d + 5 * b))
    assert 0 <= nxt.b <= cfg.b_max


def test_transition_examples():
    cfg = identity_config(b_max=5, d_max=4, u1_max=8)
    rng = np.random.default_rng(0)
    assert sg.transition(cfg, GridState(2, 2, 1), GridAction(0, 2), rng) == GridState(2, 0, 1)
    # renewables fixed at r = 2
    renew = np.zeros(cfg.r_max + 1)
    renew[2] = 1.0
    cfg_r = identity_config(b_max=5, d_max=4, u1_max=8, renewable_dist=renew,
                            renewables_enabled=True)
    assert sg.transition(cfg_r, GridState(0, 3, 0), GridAction(4, 0), rng) == GridState(0, 5, 0)
    assert sg.transition(cfg_r, GridState(1, 1, 2), GridAction(1, 1), rng) == GridState(1, 3, 2)


def test_to_mdp_small_grid():
    cfg = GridConfig(d_max=1, b_max=1, p_max=1, horizon=2)
    m = sg.to_mdp(cfg)
    assert m.num_states == 8
    assert validate(m) == []
    rows = m.transition.sum(axis=-1)[np.broadcast_to(m.feasible, m.transition.shape[:3])]
    assert np.abs(rows - 1).max() <= 1e-12
    assert not m.terminal_cost.any()


def test_to_mdp_deterministic_chains_give_point_masses():
    m = sg.to_mdp(identity_config())
    rows = m.transition[np.broadcast_to(m.feasible, m.transition.shape[:3])]
    assert set(np.unique(rows)) == {0.0, 1.0}


def test_to_mdp_costs_and_indexing():
    cfg = GridConfig(horizon=2)
    m = sg.to_mdp(cfg)
    s = GridState(3, 2, 4)
    for a in sg.feasible_actions(cfg, s):
        i, k = cfg.state_index(s), cfg.action_index(a)
        assert m.feasible[i, k]
        assert (m.stage_cost[:, i, k] == sg.stage_cost(cfg, s, a)).all()
        assert cfg.decode_state(i) == s and cfg.decode_action(k) == a
    assert m.feasible.sum() == sum(len(sg.feasible_actions(cfg, cfg.decode_state(i)))
                                   for i in range(m.num_states))


def test_to_mdp_guard():
    with pytest.raises(ValueError):
        sg.to_mdp(GridConfig(d_max=60, b_max=60, p_max=60))


@pytest.mark.parametrize("renewables", [False, True])
def test_kernel_matches_simulated_transitions(renewables):
    cfg = GridConfig(renewables_enabled=renewables)
    m = sg.to_mdp(cfg)
    rng = np.random.default_rng(11)
    for s, a in [(GridState(2, 1, 3), GridAction(2, 1)), (GridState(4, 4, 0), GridAction(0, 3)),
                 (GridState(0, 0, 4), GridAction(8, 0))]:
        draws = 10**5
        d = np.full(draws, s.d)
        b = np.full(draws, s.b)
        p = np.full(draws, s.p)
        nd, nb, np_ = sg._step(cfg, d, b, p, a.u1, a.u2, rng.random((draws, 3)))
        idx = (nd * (cfg.b_max + 1) + nb) * (cfg.p_max + 1) + np_
        freq = np.bincount(idx, minlength=m.num_states) / draws
        exact = m.transition[0, cfg.state_index(s), cfg.action_index(a)]
        sigma = np.sqrt(exact * (1 - exact) / draws)
        assert (np.abs(freq - exact) <= 4 * sigma + 1e-12).all()


@pytest.mark.parametrize("state, action", [((4, 2, 0), (2, 2)), ((0, 3, 1), (0, 0)),
                                           ((3, 5, 2), (0, 3))])
def test_fill_demand(state, action):
    assert sg.fill_demand_policy(GridState(*state)) == GridAction(*action)


def test_fill_battery():
    cfg = GridConfig(d_max=4, b_max=5, u1_max=9)
    assert sg.fill_battery_policy(cfg, GridState(4, 2, 0)) == GridAction(7, 2)
    assert sg.fill_battery_policy(cfg, GridState(0, 5, 3)) == GridAction(0, 0)
    clamped = GridConfig(d_max=4, b_max=5, u1_max=4)
    assert sg.fill_battery_policy(clamped, GridState(4, 0, 1)) == GridAction(4, 0)


def test_fill_demand_meets_demand():
    cfg = GridConfig()
    for i in range(cfg.num_states):
        s = cfg.decode_state(i)
        a = sg.fill_demand_policy(s, cfg)
        assert a.u1 + a.u2 >= s.d and sg.is_feasible(cfg, s, a)


def test_zero_demand_zero_price_costs_nothing():
    cfg = GridConfig(d_max=0, p_max=0, b_max=3, horizon=4)
    for policy in (sg.FILL_DEMAND, sg.FILL_BATTERY):
        mean, err = sg.evaluate_average_cost(cfg, policy, 100, np.random.default_rng(0))
        assert mean == 0 and err == 0


def test_evaluation_matches_scalar_simulation():
    cfg = GridConfig(horizon=4, renewables_enabled=True)
    m = sg.to_mdp(cfg)
    pi = greedy_policy(m, dp.solve(m))
    mean, _ = sg.evaluate_average_cost(cfg, pi, 1, np.random.default_rng(5))
    rng = np.random.default_rng(5)
    start = int(rng.integers(0, cfg.num_states, size=1)[0])
    uniforms = rng.random((cfg.horizon, 1, 3))
    s, total = cfg.decode_state(start), 0.0
    for n in range(cfg.horizon):
        a = cfg.decode_action(pi[n, cfg.state_index(s)])
        total += sg.stage_cost(cfg, s, a)
        d, b, p = sg._step(cfg, np.array([s.d]), np.array([s.b]), np.array([s.p]), a.u1, a.u2,
                           uniforms[n])
        s = GridState(int(d[0]), int(b[0]), int(p[0]))
    assert mean == pytest.approx(total / cfg.horizon, abs=1e-12)


def test_dp_policy_beats_baselines_and_simulation_matches_values():
    cfg = GridConfig(horizon=5)
    m = sg.to_mdp(cfg)
    q = dp.solve(m)
    pi = greedy_policy(m, q)
    episodes = 20_000
    means = {}
    for name, policy in (("dp", pi), ("fd", sg.FILL_DEMAND), ("fb", sg.FILL_BATTERY)):
        means[name] = sg.evaluate_average_cost(cfg, policy, episodes, np.random.default_rng(3))
    assert means["dp"][0] < means["fd"][0] < means["fb"][0]
    # exact expected per-stage cost from a uniform start
    exact = q[0][np.arange(m.num_states), pi[0]].mean() / cfg.horizon
    assert abs(means["dp"][0] - exact) <= 4 * means["dp"][1]


def test_evaluation_determinism_and_errors():
    cfg = GridConfig(horizon=3)
    a = sg.evaluate_average_cost(cfg, sg.FILL_DEMAND, 500, np.random.default_rng(1))
    b = sg.evaluate_average_cost(cfg, sg.FILL_DEMAND, 500, np.random.default_rng(1))
    assert a == b
    with pytest.raises(ValueError):
        sg.evaluate_average_cost(cfg, sg.FILL_DEMAND, 0, np.random.default_rng(1))
    with pytest.raises(ValueError):
        sg.evaluate_average_cost(cfg, "buy_everything", 10, np.random.default_rng(1))
