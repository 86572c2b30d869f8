"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the terminal summary by conftest, so
``pytest tests/test_acceptance.py`` ends with the full scoreboard.
"""
import json
import math
import time

import numpy as np

import conftest
from fhql import cli, dp, learner
from fhql import diagnostics as diag
from fhql import smart_grid as sg
from fhql.harness import BENCHMARK_COST_RANGE, compare_grid_policies, derive_seed
from fhql.learner import LearnerConfig, StepSchedule, sup_error
from fhql.mdp import brute_force_optimal_q
from fhql.random_mdp import RandomMdpSpec, generate
from oracles import tiny_mdp


def report(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert passed, line


def benchmark_instance(seed, setting=(10, 5, 5)):
    low, high = BENCHMARK_COST_RANGE
    return generate(RandomMdpSpec(*setting, low, high, low, high, seed=seed))


def small_instances():
    rng = np.random.default_rng(2024)
    out = []
    for k in range(20):
        n, s, a = (int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        feasible = rng.random((s, a)) < 0.8
        feasible[np.arange(s), rng.integers(0, a, size=s)] = True
        out.append(tiny_mdp(k, n, s, a, feasible=feasible, cost_scale=5.0))
    return out


def test_01_dp_matches_brute_force():
    start = time.perf_counter()
    worst = max(float(np.abs(dp.solve(m) - brute_force_optimal_q(m)).max())
                for m in small_instances())
    elapsed = time.perf_counter() - start
    report(1, "DP optimality", worst <= 1e-10 and elapsed < 10,
           f"max |Q_dp - Q_bf| = {worst:.2e} over 20 instances in {elapsed:.1f}s")


def test_02_fhql_convergence():
    start = time.perf_counter()
    good, terminated, lines = 0, 0, []
    for seed in range(10):
        m = benchmark_instance(seed)
        oracle = dp.solve(m)
        cfg = LearnerConfig(epsilon=0.05, max_iterations=200_000, trace_stride=100,
                            seed=derive_seed(seed, "learner"))
        res = learner.run(m, cfg, oracle=oracle)
        errors = dict(zip(res.trace.iterations, res.trace.errors))
        terminated += res.converged and res.iterations < 200_000
        ratio = errors[res.iterations] / errors[100]
        good += ratio <= 0.25
        lines.append(f"seed {seed}: {res.iterations} it, error {errors[res.iterations]:.3f}, "
                     f"ratio {ratio:.3f}")
    elapsed = time.perf_counter() - start
    print("\n".join(lines))
    report(2, "FHQL convergence", terminated == 10 and good >= 9 and elapsed < 120,
           f"{terminated}/10 terminated, {good}/10 with final <= 25% of iteration-100 error, "
           f"{elapsed:.1f}s")


def test_03_tolerance_monotonicity():
    start = time.perf_counter()
    m = benchmark_instance(7)
    oracle = dp.solve(m)
    finals = {}
    for eps in (0.1, 0.01):
        res = learner.run(m, LearnerConfig(epsilon=eps, seed=11), oracle=oracle)
        assert res.converged
        finals[eps] = sup_error(res.q, oracle)
    elapsed = time.perf_counter() - start
    report(3, "tolerance monotonicity", finals[0.01] <= finals[0.1] and elapsed < 60,
           f"error(0.01) = {finals[0.01]:.4f} <= error(0.1) = {finals[0.1]:.4f}, {elapsed:.1f}s")


def test_04_terminal_layer_pinned():
    runs = [(benchmark_instance(3), LearnerConfig(seed=1)),
            (small_instances()[5], LearnerConfig(seed=2, max_iterations=500, epsilon=1e-9)),
            (benchmark_instance(4, (4, 6, 3)),
             LearnerConfig(seed=3, update_mode="single_sample", max_iterations=300)),
            (sg.to_mdp(sg.GridConfig(horizon=4)), LearnerConfig(seed=4, max_iterations=400))]
    checked, broken = 0, 0
    for m, cfg in runs:
        pinned = np.where(m.feasible, m.terminal_cost[:, None], 0.0)

        def check(it, q):
            nonlocal checked, broken
            checked += 1
            broken += not np.array_equal(q[-1], pinned)

        learner.run(m, cfg, callback=check)
    report(4, "terminal pinning", broken == 0 and checked > 0,
           f"{checked} iterates over {len(runs)} runs, {broken} with Q_N != g_N")


def test_05_fixed_point():
    instances = small_instances() + [benchmark_instance(s) for s in range(10)]
    instances += [benchmark_instance(5, (5, 4, 3)), sg.to_mdp(sg.GridConfig())]
    worst = max(float(np.abs(diag.h_field(m, dp.solve(m))).max()) for m in instances)
    origin_exact = all(not diag.h_infinity_field(m, np.zeros(m.q_shape)).any() for m in instances)
    report(5, "fixed point", worst <= 1e-10 and origin_exact,
           f"max |h(Q_dp)| = {worst:.2e}, h_inf(0) == 0 on all {len(instances)} instances: "
           f"{origin_exact}")


def test_06_ode_stability():
    start = time.perf_counter()
    m = benchmark_instance(6)
    q_star = dp.solve(m)
    rng = np.random.default_rng(derive_seed(6, "diagnostics"))
    worst = {}
    for kind in (diag.H, diag.H_INFINITY):
        target = q_star if kind == diag.H else np.zeros(m.q_shape)
        finals = []
        for _ in range(10):
            q0 = diag.flow_start(m, kind, 10.0, rng)
            _, dist = diag.euler_flow(m, q0, kind, 0.1, 2000, target=target)
            finals.append(dist[-1])
        worst[kind] = max(finals)
    elapsed = time.perf_counter() - start
    report(6, "ODE stability", max(worst.values()) <= 1e-4 and elapsed < 30,
           f"worst final distance h {worst[diag.H]:.2e}, h_inf {worst[diag.H_INFINITY]:.2e}, "
           f"{elapsed:.1f}s")


def test_07_lipschitz():
    m = benchmark_instance(8)
    rng = np.random.default_rng(derive_seed(8, "diagnostics"))
    probes = [diag.lipschitz_probe(m, kind, 1000, 10.0, rng) for kind in (diag.H, diag.H_INFINITY)]
    report(7, "Lipschitz", all(p.max_ratio <= 2 + 1e-9 and p.trials == 1000 for p in probes),
           ", ".join(f"{p.field_kind} max ratio {p.max_ratio:.4f}" for p in probes))


def test_08_martingale_noise():
    m = benchmark_instance(9, (5, 4, 3))
    rng = np.random.default_rng(derive_seed(9, "diagnostics"))
    r = diag.martingale_noise_probe(m, dp.solve(m), 10**5, rng)
    allowed = max(1, math.ceil(r.components / 10**4))
    ok = r.mean_failures <= allowed and r.moment_ok and r.samples == 10**5
    report(8, "martingale noise", ok,
           f"{r.mean_failures}/{r.components} 4-sigma failures (allowed {allowed}), "
           f"max E[M^2] {r.second_moment.max():.1f} <= bound {r.moment_bound:.1f}")


def test_09_step_schedule():
    schedule = StepSchedule(10)
    total, squares, limit = learner.harmonic_witness(10**6, schedule)
    report(9, "step schedule", abs(squares - limit) <= 1e-3 and total >= 100,
           f"sum a^2 = {squares:.6f} vs L pi^2/6 = {limit:.6f}, sum a = {total:.2f}")


def test_10_smart_grid_ordering():
    start = time.perf_counter()
    base = sg.GridConfig()
    eval_seed = derive_seed(0, "evaluation")
    cfg = LearnerConfig(seed=derive_seed(0, "learner"))
    results = {}
    for renew in (False, True):
        rows, _ = compare_grid_policies(base.with_renewables(renew), cfg, 10**4, eval_seed)
        results[renew] = {alg: (mean, err) for _, alg, mean, err, _, _ in rows}

    def gap_ok(lo, hi):
        return hi[0] - lo[0] > 3 * math.hypot(lo[1], hi[1])

    plain = results[False]
    ordered = (gap_ok(plain["fhql"], plain["fill_demand"])
               and gap_ok(plain["fill_demand"], plain["fill_battery"]))
    greener = results[True]["fhql"][0] < plain["fhql"][0]
    elapsed = time.perf_counter() - start
    costs = " / ".join(f"{alg} {plain[alg][0]:.3f}" for alg in ("fhql", "fill_demand",
                                                                 "fill_battery"))
    report(10, "smart grid ordering", ordered and greener and elapsed < 180,
           f"{costs}; fhql with renewables {results[True]['fhql'][0]:.3f}, {elapsed:.1f}s")


CLI_CONFIGS = {
    "solve-dp": {"instance": {"kind": "random_mdp", "setting": [10, 5, 5]}},
    "train": {"instance": {"kind": "random_mdp", "setting": [10, 5, 5]}},
    "random-mdp": {"instance": {"kind": "random_mdp", "setting": [10, 5, 5]}},
    "smart-grid": {"instance": {"d_max": 2, "b_max": 2, "p_max": 2, "horizon": 5},
                   "eval_episodes": 2000},
    "diagnostics": {"instance": {"kind": "random_mdp", "setting": [10, 5, 5]}},
}


def test_11_cli_determinism(tmp_path):
    mismatched = []
    files = 0
    for command, doc in CLI_CONFIGS.items():
        cfg = tmp_path / f"{command}.json"
        cfg.write_text(json.dumps(doc))
        snaps = []
        for run in ("a", "b"):
            out = tmp_path / command / run
            assert cli.main([command, "--config", str(cfg), "--seed", "123",
                             "--out", str(out)]) == 0
            snaps.append({p.relative_to(out): p.read_bytes() for p in out.rglob("*")
                          if p.is_file()})
        files += len(snaps[0])
        if not snaps[0] or snaps[0] != snaps[1]:
            mismatched.append(command)
    report(11, "CLI determinism", not mismatched,
           f"{len(CLI_CONFIGS)} subcommands, {files} files byte-identical across reruns"
           + (f"; mismatched: {mismatched}" if mismatched else ""))
