"""Experiment drivers writing CSV/JSON artifacts into one output directory."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics as diag
from . import dp, learner, smart_grid
from .learner import LearnerConfig, StepSchedule
from .mdp import FiniteHorizonMdp, greedy_policy, q_to_value, validate
from .random_mdp import RandomMdpSpec, generate

log = logging.getLogger(__name__)

RANDOM_MDP = "random_mdp"
SMART_GRID = "smart_grid"
DIAGNOSTICS = "diagnostics"
MDP_FILE = "mdp_file"
KINDS = (RANDOM_MDP, SMART_GRID, DIAGNOSTICS)

# Cost range used for the (N, |S|, |A|) experiment grid; with flat-Dirichlet
# kernels it puts (10, 5, 5) near 6-7 thousand iterations at epsilon = 0.05.
BENCHMARK_COST_RANGE = (0.0, 50.0)


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, role: str) -> int:
    """Independent 64-bit seed for one consumer of the master seed."""
    words = [int(seed) & 0xFFFFFFFF, int(seed) >> 32] + [ord(ch) for ch in role]
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])


@dataclass
class ExperimentConfig:
    experiment_kind: str
    instance: dict
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    output_dir: str = "out"
    emit_stage_snapshots: Optional[list] = None
    seed: int = 0
    eval_episodes: int = 10_000
    compare_renewables: bool = True
    lipschitz_trials: int = 1000
    flow_starts: int = 3
    flow_steps: int = 2000
    noise_samples: int = 10_000
    base_dir: str = "."

    def __post_init__(self):
        if self.experiment_kind not in KINDS:
            raise ConfigError(f"experiment_kind must be one of {KINDS}")
        if not isinstance(self.instance, dict):
            raise ConfigError("instance must be a JSON object")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")

    def instance_kind(self) -> str:
        kind = self.instance.get("kind")
        if kind is None:
            kind = SMART_GRID if self.experiment_kind == SMART_GRID else RANDOM_MDP
        if kind not in (RANDOM_MDP, SMART_GRID, MDP_FILE):
            raise ConfigError(f"unknown instance kind {kind!r}")
        return kind

    def instance_fields(self) -> dict:
        return {k: v for k, v in self.instance.items() if k != "kind"}


def load_experiment_config(path, seed: Optional[int] = None, out: Optional[str] = None,
                           default_kind: str = RANDOM_MDP) -> ExperimentConfig:
    """Read a JSON config; ``seed`` and ``out`` override the file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
        doc.setdefault("experiment_kind", default_kind)
        doc.setdefault("instance", {})
        doc["learner"] = LearnerConfig.from_dict(doc.get("learner", {}))
        doc["base_dir"] = str(Path(path).resolve().parent)
        cfg = ExperimentConfig(**doc)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        cfg.seed = seed
    if out is not None:
        cfg.output_dir = out
    cfg.learner = replace(cfg.learner, seed=derive_seed(cfg.seed, "learner"))
    return cfg


def random_spec(cfg: ExperimentConfig) -> RandomMdpSpec:
    fields = cfg.instance_fields()
    if "setting" in fields:
        fields["horizon"], fields["num_states"], fields["num_actions"] = fields.pop("setting")
    fields["seed"] = derive_seed(cfg.seed, "instance")
    for key, default in zip(("cost_low", "cost_high"), BENCHMARK_COST_RANGE):
        fields.setdefault(key, default)
        fields.setdefault("terminal_" + key, default)
    try:
        return RandomMdpSpec(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad random_mdp instance: {exc}") from exc


def grid_config(cfg: ExperimentConfig) -> smart_grid.GridConfig:
    fields = cfg.instance_fields()
    fields["seed"] = cfg.seed
    try:
        return smart_grid.GridConfig.from_dict(fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad smart_grid instance: {exc}") from exc


def build_mdp(cfg: ExperimentConfig) -> FiniteHorizonMdp:
    kind = cfg.instance_kind()
    if kind == RANDOM_MDP:
        return generate(random_spec(cfg))
    if kind == SMART_GRID:
        try:
            return smart_grid.to_mdp(grid_config(cfg))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    path = Path(cfg.base_dir) / cfg.instance["path"]
    try:
        return FiniteHorizonMdp.from_json(path.read_text())
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load MDP file {path}: {exc}") from exc


def require_valid(mdp):
    report = validate(mdp)
    if report:
        raise ConfigError(f"invalid MDP ({len(report)} violations), first: {report[0]}")


def stage_snapshots(cfg, horizon):
    stages = cfg.emit_stage_snapshots
    if stages is None:
        stages = [0, horizon // 2, horizon - 1]
    stages = sorted(set(int(s) for s in stages))
    if any(s < 0 or s >= horizon for s in stages):
        raise ConfigError(f"snapshot stages must lie in 0..{horizon - 1}")
    return stages


class OutputDir:
    """All artifact writes go through here so nothing lands outside ``root``."""

    def __init__(self, root):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path:
        target = (self.root / name).resolve()
        if self.root != target and self.root not in target.parents:
            raise ValueError(f"refusing to write outside {self.root}: {name}")
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def write_text(self, name, text):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(text)

    def write_json(self, name, doc):
        self.write_text(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def write_rows(self, name, header, rows):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        self.write_text(name, buf.getvalue())


def _fmt(x):
    return repr(float(x))


def q_rows(mdp, q):
    for n, i, a in zip(*np.nonzero(np.broadcast_to(mdp.feasible, mdp.q_shape))):
        yield (int(n), int(i), int(a), _fmt(q[n, i, a]))


def read_q_csv(path, shape) -> np.ndarray:
    q = np.zeros(shape)
    with open(path) as fh:
        for row in csv.DictReader(fh):
            q[int(row["stage"]), int(row["state"]), int(row["action"])] = float(row["q"])
    return q


@dataclass
class ResultRecord:
    setting: object
    epsilon: float
    error: float
    iterations: int
    converged: bool
    seed: int
    wall_time: float = 0.0

    def to_dict(self):
        # wall time is logged, not written, so artifacts stay byte-reproducible
        return {"setting": self.setting, "epsilon": self.epsilon, "error": self.error,
                "iterations": self.iterations, "converged": self.converged, "seed": self.seed}


def _write_snapshots(out, mdp, stages, q_learned, q_dp):
    j_l, j_d = q_to_value(mdp, q_learned), q_to_value(mdp, q_dp)
    pi_l, pi_d = greedy_policy(mdp, q_learned), greedy_policy(mdp, q_dp)
    for n in stages:
        out.write_rows(f"value_stage_{n}.csv", ["state", "J_learned", "J_dp"],
                       [(i, _fmt(j_l[n, i]), _fmt(j_d[n, i])) for i in range(mdp.num_states)])
        out.write_rows(f"policy_stage_{n}.csv", ["state", "action_learned", "action_dp"],
                       [(i, int(pi_l[n, i]), int(pi_d[n, i])) for i in range(mdp.num_states)])


def run_training(cfg: ExperimentConfig) -> tuple:
    """Train on the configured instance with oracle tracking; shared by
    ``train`` and ``random-mdp``. Returns (record, mdp, learned Q, DP Q)."""
    out = OutputDir(cfg.output_dir)
    mdp = build_mdp(cfg)
    require_valid(mdp)
    start = time.perf_counter()
    q_dp = dp.solve(mdp)
    result = learner.run(mdp, cfg.learner, oracle=q_dp)
    wall = time.perf_counter() - start
    out.write_text("error_curve.csv", result.trace.to_csv())
    out.write_rows("q_learned.csv", ["stage", "state", "action", "q"], q_rows(mdp, result.q))
    out.write_rows("q_dp.csv", ["stage", "state", "action", "q"], q_rows(mdp, q_dp))
    setting = [mdp.horizon, mdp.num_states, mdp.num_actions]
    record = ResultRecord(setting, cfg.learner.epsilon, learner.sup_error(result.q, q_dp),
                          result.iterations, result.converged, cfg.seed, wall)
    out.write_json("summary.json", record.to_dict())
    log.info("setting %s: error %.4f after %d iterations (%.2fs)",
             setting, record.error, record.iterations, wall)
    return record, mdp, result.q, q_dp


def run_random_mdp_experiment(cfg: ExperimentConfig) -> ResultRecord:
    record, mdp, q_learned, q_dp = run_training(cfg)
    _write_snapshots(OutputDir(cfg.output_dir), mdp, stage_snapshots(cfg, mdp.horizon),
                     q_learned, q_dp)
    return record


def run_solve_dp(cfg: ExperimentConfig) -> np.ndarray:
    out = OutputDir(cfg.output_dir)
    mdp = build_mdp(cfg)
    require_valid(mdp)
    q = dp.solve(mdp)
    out.write_text("mdp.json", mdp.to_json())
    out.write_rows("q_dp.csv", ["stage", "state", "action", "q"], q_rows(mdp, q))
    values, policy = q_to_value(mdp, q), greedy_policy(mdp, q)
    out.write_rows("value_dp.csv", ["stage", "state", "J_dp"],
                   [(n, i, _fmt(values[n, i])) for n in range(mdp.horizon + 1)
                    for i in range(mdp.num_states)])
    out.write_rows("policy_dp.csv", ["stage", "state", "action_dp"],
                   [(n, i, int(policy[n, i])) for n in range(mdp.horizon)
                    for i in range(mdp.num_states)])
    return q


def scenario_label(grid: smart_grid.GridConfig) -> str:
    tag = "renewables" if grid.renewables_enabled else "no_renewables"
    return f"{grid.horizon}-{grid.d_max}-{grid.b_max}-{grid.p_max}/{tag}"


def compare_grid_policies(grid: smart_grid.GridConfig, learner_cfg: LearnerConfig,
                          episodes: int, eval_seed: int) -> tuple:
    """Train FHQL on one grid and evaluate it against both baselines.

    Every algorithm is simulated with a fresh stream from ``eval_seed``, so
    all of them face the same initial states and exogenous paths.
    """
    mdp = smart_grid.to_mdp(grid)
    result = learner.run(mdp, learner_cfg)
    rows = []
    policies = (("fhql", greedy_policy(mdp, result.q)),
                ("fill_demand", smart_grid.FILL_DEMAND),
                ("fill_battery", smart_grid.FILL_BATTERY))
    for name, policy in policies:
        mean, err = smart_grid.evaluate_average_cost(grid, policy, episodes,
                                                     np.random.default_rng(eval_seed))
        rows.append((scenario_label(grid), name, mean, err, episodes, eval_seed))
    return rows, result


def run_smart_grid_experiment(cfg: ExperimentConfig) -> list:
    out = OutputDir(cfg.output_dir)
    base = grid_config(cfg)
    if cfg.compare_renewables:
        grids = [base.with_renewables(False), base.with_renewables(True)]
    else:
        grids = [base]
    eval_seed = derive_seed(cfg.seed, "evaluation")
    all_rows, summary = [], []
    for grid in grids:
        try:
            rows, result = compare_grid_policies(grid, cfg.learner, cfg.eval_episodes, eval_seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        all_rows.extend(rows)
        label = scenario_label(grid)
        out.write_text(f"error_curve_{label.replace('/', '_')}.csv", result.trace.to_csv())
        summary.append({"scenario": label, "iterations": result.iterations,
                        "converged": result.converged})
    out.write_rows("comparison.csv", ["scenario", "algorithm", "avg_cost", "std_err",
                                      "episodes", "seed"],
                   [(s, a, _fmt(m), _fmt(e), n, seed) for s, a, m, e, n, seed in all_rows])
    out.write_json("summary.json", {"seed": cfg.seed, "grid": base.to_dict(), "runs": summary})
    return all_rows


def _check(name, passed, **details):
    return {"check": name, "passed": bool(passed), **details}


def run_diagnostics(cfg: ExperimentConfig) -> dict:
    """Run every probe; returns {check name: report}. A failed validation
    skips the probes that need a well-formed instance."""
    out = OutputDir(cfg.output_dir)
    mdp = build_mdp(cfg)
    rng = np.random.default_rng(derive_seed(cfg.seed, "diagnostics"))
    reports = {}
    violations = validate(mdp)
    reports["validate"] = _check("validate", not violations, violations=[
        {"kind": v.kind, "index": list(v.index), "detail": v.detail} for v in violations[:100]],
        count=len(violations))
    if not violations:
        q_dp = dp.solve(mdp)
        h_star = diag.h_field(mdp, q_dp)
        h_origin = diag.h_infinity_field(mdp, np.zeros(mdp.q_shape))
        residual = float(np.abs(h_star).max())
        reports["fixed_point"] = _check(
            "fixed_point", residual <= 1e-10 and not h_origin.any(),
            h_residual=residual, h_infinity_at_origin=float(np.abs(h_origin).max()),
            bellman_residual=dp.bellman_residual(mdp, q_dp))

        probes = [diag.lipschitz_probe(mdp, kind, cfg.lipschitz_trials, 10.0, rng)
                  for kind in (diag.H, diag.H_INFINITY)]
        reports["lipschitz"] = _check("lipschitz", all(p.passed for p in probes),
                                      probes=[p.to_dict() for p in probes])

        flows = []
        for kind in (diag.H, diag.H_INFINITY):
            for _ in range(cfg.flow_starts):
                q0 = diag.flow_start(mdp, kind, 10.0, rng)
                _, dist = diag.euler_flow(mdp, q0, kind, 0.1, cfg.flow_steps)
                flows.append({"field_kind": kind, "initial": float(dist[0]),
                              "final": float(dist[-1])})
        reports["euler_flow"] = _check("euler_flow", all(f["final"] <= 1e-4 for f in flows),
                                       tolerance=1e-4, dt=0.1, steps=cfg.flow_steps, runs=flows)

        noise = diag.martingale_noise_probe(mdp, q_dp, cfg.noise_samples, rng)
        details = noise.to_dict()
        reports["martingale_noise"] = _check("martingale_noise", details.pop("passed"), **details)

        probe_q = diag.random_table(mdp, 1.0, rng)
        gaps = [diag.scaled_field_gap(mdp, probe_q, r) for r in (1e3, 2e3, 1e6)]
        cost_scale = float(np.abs(mdp.stage_cost).max() + np.abs(mdp.terminal_cost).max())
        reports["scaled_limit"] = _check(
            "scaled_limit",
            gaps[2] <= cost_scale / 1e6 * (mdp.horizon + 1) + 1e-12
            and gaps[1] <= 0.5 * gaps[0] * (1 + 1e-6) + 1e-12,
            gaps={"1e3": gaps[0], "2e3": gaps[1], "1e6": gaps[2]})

    total, squares, limit = learner.harmonic_witness(10**6, cfg.learner.schedule)
    reports["step_schedule"] = _check(
        "step_schedule", abs(squares - limit) <= 1e-3 and total >= 100,
        block_length=cfg.learner.schedule.block_length, sum_a=total, sum_a_squared=squares,
        limit_a_squared=limit)

    for name, report in reports.items():
        out.write_json(f"diagnostics/{name}.json", report)
    out.write_json("diagnostics/summary.json",
                   {name: report["passed"] for name, report in reports.items()})
    return reports
