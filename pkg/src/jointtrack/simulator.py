"""Closed-loop simulation: plan, filter, move, sense, estimate, log."""

from __future__ import annotations

import dataclasses
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .connectivity import build_graph, min_pairwise_distance
from .core import JointBelief, ScenarioConfig, TargetScript, validate_config
from .estimation import (
    ekf_update_robots,
    ekf_update_targets,
    predict_robots,
    predict_targets,
    stack_robot_measurements,
    stack_target_measurements,
)
from .models import NoiseModel, sample_process_noise, sense_gps, sense_range_bearing
from .planner import (
    PlanResult,
    continuous_optimize,
    default_action_set,
    exhaustive_select,
    greedy_select,
    random_select,
)
from .safety_filter import DisconnectedAtEntry, FilterResult, filter_controls

MAX_PLACEMENT_ATTEMPTS = 10_000

METRIC_FIELDS = (
    "step",
    "sq_err_loc",
    "sq_err_track",
    "trace_loc",
    "trace_track",
    "lambda2_est",
    "lambda2_true",
    "min_dist_est",
    "min_dist_true",
    "planner_time",
    "filter_status",
    "perturbation",
)


class PlacementFailed(RuntimeError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class WorldState:
    true_robots: np.ndarray
    true_targets: np.ndarray
    belief: JointBelief
    step: int
    rng: np.random.Generator


@dataclass(frozen=True)
class StepMetrics:
    step: int
    sq_err_loc: float
    sq_err_track: float
    trace_loc: float
    trace_track: float
    lambda2_est: float
    lambda2_true: float
    min_dist_est: float
    min_dist_true: float
    planner_time: float = 0.0
    filter_status: str = "none"
    perturbation: float = 0.0

    def as_row(self) -> tuple:
        return tuple(getattr(self, f) for f in METRIC_FIELDS)


def target_script_input(script: TargetScript, step: int) -> np.ndarray:
    if script.kind == "stationary":
        u = np.zeros(2)
    elif script.kind == "constant":
        u = np.array(script.velocity, dtype=float)
    elif script.kind == "piecewise":
        u = np.zeros(2)
        for start, vel in script.segments:
            if step >= start:
                u = np.array(vel, dtype=float)
            else:
                break
    else:
        raise ValueError(f"unknown script kind {script.kind!r}")
    if script.max_speed is not None:
        speed = float(np.hypot(*u))
        if speed > script.max_speed:
            u = u * (script.max_speed / speed)
    return u


def _lambda2(points, cfg: ScenarioConfig) -> float:
    if len(points) < 2:
        return math.nan
    return build_graph(points, cfg.r_c, cfg.sigma_norm).lambda2


def _feasible_layout(points, cfg: ScenarioConfig) -> bool:
    if len(points) < 2:
        return True
    return min_pairwise_distance(points) > cfg.d_min and _lambda2(points, cfg) > cfg.eps_conn


def init_world(cfg: ScenarioConfig) -> WorldState:
    """Random start in the arena.

    Robots are rejection-sampled until both the true layout and the initial
    estimated layout are connected and collision-free, since the barrier
    filter acts on estimates and only keeps a feasible start feasible.
    """
    cfg = validate_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    w, h = cfg.arena
    sd_r = math.sqrt(cfg.init_cov_robot)
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        robots = rng.uniform((0.0, 0.0), (w, h), size=(cfg.n_robots, 2))
        robot_est = robots + sd_r * rng.standard_normal((cfg.n_robots, 2))
        if _feasible_layout(robots, cfg) and _feasible_layout(robot_est, cfg):
            break
    else:
        raise PlacementFailed(f"no feasible robot layout after {MAX_PLACEMENT_ATTEMPTS} attempts")
    targets = rng.uniform((0.0, 0.0), (w, h), size=(cfg.n_targets, 2))
    target_est = targets + math.sqrt(cfg.init_cov_target) * rng.standard_normal((cfg.n_targets, 2))
    belief = JointBelief(
        robot_est,
        np.tile(cfg.init_cov_robot * np.eye(2), (cfg.n_robots, 1, 1)),
        target_est,
        np.tile(cfg.init_cov_target * np.eye(2), (cfg.n_targets, 1, 1)),
    )
    return WorldState(robots, targets, belief, 0, rng)


def measure_metrics(world: WorldState, cfg: ScenarioConfig, plan: PlanResult | None = None,
                    filt: FilterResult | None = None) -> StepMetrics:
    b = world.belief
    return StepMetrics(
        step=world.step,
        sq_err_loc=float(np.sum((world.true_robots - b.robot_means) ** 2)),
        sq_err_track=float(np.sum((world.true_targets - b.target_means) ** 2)),
        trace_loc=b.trace_robots(),
        trace_track=b.trace_targets(),
        lambda2_est=_lambda2(b.robot_means, cfg),
        lambda2_true=_lambda2(world.true_robots, cfg),
        min_dist_est=min_pairwise_distance(b.robot_means),
        min_dist_true=min_pairwise_distance(world.true_robots),
        planner_time=plan.wall_time if plan is not None else 0.0,
        filter_status=filt.status if filt is not None else "none",
        perturbation=filt.perturbation if filt is not None else 0.0,
    )


def plan_controls(belief: JointBelief, cfg: ScenarioConfig, rng: np.random.Generator) -> PlanResult:
    nm = NoiseModel.from_config(cfg)
    kw = {"dt": cfg.dt, "weights": cfg.trace_weights}
    if cfg.planner == "continuous":
        return continuous_optimize(belief, nm, cfg.u_max, cfg.planner_budget, rng=rng, **kw)
    actions = default_action_set(cfg)
    if cfg.planner == "greedy":
        return greedy_select(belief, actions, nm, **kw)
    if cfg.planner == "random":
        return random_select(belief, actions, rng, nm, **kw)
    return exhaustive_select(belief, actions, nm, **kw)


def choose_controls(belief: JointBelief, cfg: ScenarioConfig, rng: np.random.Generator):
    """Plan and filter from the belief alone; ground truth never reaches here."""
    plan = plan_controls(belief, cfg, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DisconnectedAtEntry)
        filt = filter_controls(plan, belief, cfg)
    return plan, filt


def sense(true_robots, true_targets, rng: np.random.Generator, nm: NoiseModel) -> list:
    """All measurements at the true positions, robot-major, GPS first."""
    out = []
    n = len(true_robots)
    for i in range(n):
        out.append(sense_gps(rng, true_robots[i], nm, i))
        for k in range(n):
            if k != i:
                out.append(sense_range_bearing(rng, true_robots[i], true_robots[k], nm, ("robot", i), ("robot", k)))
        for j, tgt in enumerate(true_targets):
            out.append(sense_range_bearing(rng, true_robots[i], tgt, nm, ("robot", i), ("target", j)))
    return out


def estimate(belief: JointBelief, u_actual, measurements, nm: NoiseModel, dt: float) -> JointBelief:
    """One predict+update cycle: targets first (against robot priors), then robots."""
    prior = predict_robots(predict_targets(belief, nm), u_actual, nm, dt)
    ms_t = stack_target_measurements(prior.robot_means, prior.target_means, measurements, nm)
    post = ekf_update_targets(prior, ms_t)
    ms_r = stack_robot_measurements(prior.robot_means, measurements, nm)
    return ekf_update_robots(post, ms_r)


def step(world: WorldState, cfg: ScenarioConfig) -> tuple[WorldState, StepMetrics]:
    cfg = validate_config(cfg)
    if world.step >= cfg.horizon:
        raise ValueError("horizon already reached")
    try:
        nm = NoiseModel.from_config(cfg)
        rng = world.rng
        plan, filt = choose_controls(world.belief, cfg, rng)
        u = filt.actual
        robots = world.true_robots + cfg.dt * u
        robots = robots + np.array([sample_process_noise(rng, nm, "robot") for _ in robots])
        u_t = np.array([target_script_input(s, world.step) for s in cfg.target_scripts])
        targets = world.true_targets + cfg.dt * u_t
        targets = targets + np.array([sample_process_noise(rng, nm, "target") for _ in targets])
        meas = sense(robots, targets, rng, nm)
        belief = estimate(world.belief, u, meas, nm, cfg.dt)
    except Exception as exc:
        raise SimulationError(world.step, exc) from exc
    new = WorldState(robots, targets, belief, world.step + 1, rng)
    return new, measure_metrics(new, cfg, plan, filt)


def run(cfg: ScenarioConfig) -> list[StepMetrics]:
    """Metrics for step 0 (initial state) through ``cfg.horizon``."""
    cfg = validate_config(cfg)
    world = init_world(cfg)
    rows = [measure_metrics(world, cfg)]
    for _ in range(cfg.horizon):
        world, metrics = step(world, cfg)
        rows.append(metrics)
    return rows
