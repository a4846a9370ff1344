"""Single-step planner benchmark: continuous search vs greedy vs random.

Every (n, trial) pair builds one randomised instance; the three planners
then score controls on bitwise-identical copies of the same belief with no
safety constraints applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import JointBelief
from .estimation import (
    ekf_update_robots,
    ekf_update_targets,
    stack_robot_measurements,
    stack_target_measurements,
)
from .models import NoiseModel
from .planner import PlanResult, continuous_optimize, greedy_select, heading_actions, random_select
from .simulator import sense

ARENA = 10.0
TARGET_COV = 10.0
ROBOT_COV = 1.0
DISCRETE_MAGNITUDE = 1.5
DISCRETE_HEADINGS = 8
CONTINUOUS_RADIUS = 3.0
METHODS = ("continuous", "greedy", "random")
CSV_COLUMNS = ("n", "trial", "method", "trace", "seconds")


@dataclass(frozen=True)
class Instance:
    prior: JointBelief
    belief: JointBelief
    true_robots: np.ndarray
    true_targets: np.ndarray


@dataclass(frozen=True)
class ComparisonRow:
    n: int
    trial: int
    method: str
    trace: float
    seconds: float
    evaluations: int


def instance_rng(n: int, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([n, seed]))


def single_step_instance(n: int, seed: int, nm: NoiseModel | None = None) -> Instance:
    """Random n-robot, n-target instance after one measurement and EKF update."""
    if n < 1:
        raise ValueError("n must be at least 1")
    nm = nm or NoiseModel()
    rng = instance_rng(n, seed)
    robots = rng.uniform(0.0, ARENA, size=(n, 2))
    targets = rng.uniform(0.0, ARENA, size=(n, 2))
    robot_est = robots + math.sqrt(ROBOT_COV) * rng.standard_normal((n, 2))
    target_est = targets + math.sqrt(TARGET_COV) * rng.standard_normal((n, 2))
    prior = JointBelief(
        robot_est,
        np.tile(ROBOT_COV * np.eye(2), (n, 1, 1)),
        target_est,
        np.tile(TARGET_COV * np.eye(2), (n, 1, 1)),
    )
    meas = sense(robots, targets, rng, nm)
    post = ekf_update_targets(prior, stack_target_measurements(robot_est, target_est, meas, nm))
    post = ekf_update_robots(post, stack_robot_measurements(robot_est, meas, nm))
    return Instance(prior, post, robots, targets)


def run_methods(inst: Instance, trial_rng: np.random.Generator, budget: int,
                nm: NoiseModel) -> dict[str, PlanResult]:
    """Run the three planners one after another on the same belief."""
    n = inst.belief.n_robots
    actions = [heading_actions(DISCRETE_MAGNITUDE, DISCRETE_HEADINGS) for _ in range(n)]
    return {
        "continuous": continuous_optimize(inst.belief, nm, CONTINUOUS_RADIUS, budget, rng=trial_rng),
        "greedy": greedy_select(inst.belief, actions, nm),
        "random": random_select(inst.belief, actions, trial_rng, nm),
    }


def compare(n_values, trials: int, budget_per_dim: int = 100,
            nm: NoiseModel | None = None) -> list[ComparisonRow]:
    """Benchmark table with one row per (n, trial, method).

    The continuous search gets ``budget_per_dim * 2n`` oracle evaluations,
    never fewer than 100.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    nm = nm or NoiseModel()
    rows = []
    for n in n_values:
        budget = max(100, budget_per_dim * 2 * int(n))
        for trial in range(trials):
            inst = single_step_instance(int(n), trial, nm)
            trial_rng = np.random.default_rng(np.random.SeedSequence([int(n), trial, 1]))
            for method, res in run_methods(inst, trial_rng, budget, nm).items():
                rows.append(ComparisonRow(int(n), trial, method, res.predicted_trace, res.wall_time,
                                          res.evaluations))
    return rows


def summarize(rows) -> dict:
    """Per-n mean and std of trace and seconds for every method."""
    out: dict = {}
    for n in sorted({r.n for r in rows}):
        per_n = {}
        for method in METHODS:
            sel = [r for r in rows if r.n == n and r.method == method]
            if not sel:
                continue
            tr = np.array([r.trace for r in sel])
            sec = np.array([r.seconds for r in sel])
            per_n[method] = {
                "trials": len(sel),
                "trace_mean": float(tr.mean()),
                "trace_std": float(tr.std()),
                "seconds_mean": float(sec.mean()),
                "seconds_std": float(sec.std()),
            }
        out[str(n)] = per_n
    return out


def loglog_slope(n_values, seconds) -> float:
    """Least-squares slope of log(seconds) against log(n)."""
    slope, _ = np.polyfit(np.log(np.asarray(n_values, float)), np.log(np.asarray(seconds, float)), 1)
    return float(slope)
