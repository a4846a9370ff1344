"""Desired-control selection over covariance-trace objectives.

All planners see beliefs only. Scores come from
:func:`jointtrack.estimation.oracle_posterior_traces`, weighted as
``w_R * tr_R + w_T * tr_T``.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DegenerateGeometry, JointBelief, ScenarioConfig
from .estimation import oracle_posterior_traces
from .models import NoiseModel

EXHAUSTIVE_LIMIT = 10 ** 6


class SearchSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class PlanResult:
    desired: np.ndarray  # (N, 2)
    predicted_trace: float
    evaluations: int
    wall_time: float


# One (K_i, 2) array of candidate controls per robot.
ActionSet = Sequence[np.ndarray]


def heading_actions(magnitude: float, headings: int) -> np.ndarray:
    """Equally spaced headings at ``magnitude`` followed by the zero action."""
    if magnitude == 0:
        return np.zeros((1, 2))
    ang = 2.0 * np.pi * np.arange(headings) / headings
    moves = magnitude * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    moves[np.abs(moves) < 1e-12] = 0.0
    return np.vstack([moves, np.zeros((1, 2))])


def default_action_set(cfg: ScenarioConfig) -> list[np.ndarray]:
    acts = heading_actions(cfg.action_magnitude, cfg.action_headings)
    return [acts.copy() for _ in range(cfg.n_robots)]


class _Scorer:
    def __init__(self, belief: JointBelief, nm: NoiseModel, weights):
        self.belief = belief
        self.nm = nm
        self.w_r, self.w_t = weights
        self.count = 0

    def __call__(self, positions: np.ndarray) -> float:
        self.count += 1
        try:
            tr_r, tr_t = oracle_posterior_traces(positions, self.belief, self.nm)
        except DegenerateGeometry:
            # Coincident hypothetical positions cannot be sensed; never prefer them.
            return math.inf
        return self.w_r * tr_r + self.w_t * tr_t


def greedy_select(belief: JointBelief, actions: ActionSet, nm: NoiseModel, *, dt: float = 1.0,
                  weights=(1.0, 1.0)) -> PlanResult:
    """Sequential greedy choice, one robot at a time in index order.

    Robots already decided sit at their chosen hypothetical positions, robots
    not yet visited stay at their current estimates. Ties keep the earliest
    candidate.
    """
    t0 = time.perf_counter()
    score = _Scorer(belief, nm, weights)
    positions = np.array(belief.robot_means, dtype=float)
    desired = np.zeros((belief.n_robots, 2))
    best = math.inf
    for i, cands in enumerate(actions):
        best = math.inf
        for u in cands:
            positions[i] = belief.robot_means[i] + dt * u
            tr = score(positions)
            if tr < best:
                best = tr
                desired[i] = u
        positions[i] = belief.robot_means[i] + dt * desired[i]
    return PlanResult(desired, float(best), score.count, time.perf_counter() - t0)


def exhaustive_select(belief: JointBelief, actions: ActionSet, nm: NoiseModel, *, dt: float = 1.0,
                      weights=(1.0, 1.0)) -> PlanResult:
    size = math.prod(len(c) for c in actions)
    if size > EXHAUSTIVE_LIMIT:
        raise SearchSpaceTooLarge(f"{size} joint actions exceed the limit of {EXHAUSTIVE_LIMIT}")
    t0 = time.perf_counter()
    score = _Scorer(belief, nm, weights)
    best, best_u = math.inf, None
    for combo in itertools.product(*[range(len(c)) for c in actions]):
        u = np.array([actions[i][k] for i, k in enumerate(combo)])
        tr = score(belief.robot_means + dt * u)
        if tr < best:
            best, best_u = tr, u
    return PlanResult(best_u, float(best), score.count, time.perf_counter() - t0)


def random_select(belief: JointBelief, actions: ActionSet, rng: np.random.Generator, nm: NoiseModel, *,
                  dt: float = 1.0, weights=(1.0, 1.0)) -> PlanResult:
    t0 = time.perf_counter()
    u = np.array([c[rng.integers(len(c))] for c in actions], dtype=float)
    score = _Scorer(belief, nm, weights)
    tr = score(belief.robot_means + dt * u)
    return PlanResult(u, float(tr), score.count, time.perf_counter() - t0)


def _project_balls(u: np.ndarray, radius: float) -> np.ndarray:
    # u has shape (..., N, 2)
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    return u * scale


def continuous_optimize(belief: JointBelief, nm: NoiseModel, u_max: float, budget: int, *,
                        rng: np.random.Generator | None = None, dt: float = 1.0, weights=(1.0, 1.0),
                        population: int = 32, elite_frac: float = 0.25, tol: float = 1e-6,
                        patience: int = 2) -> PlanResult:
    """Cross-entropy search over the joint control space, each robot in its own ball.

    Samples a diagonal Gaussian, projects every sample onto the per-robot balls
    of radius ``u_max`` for scoring, refits to the elite quarter, and stops when
    the budget is spent or the elite mean score changes by less than ``tol``
    on ``patience`` consecutive iterations.
    """
    if budget < 100:
        raise ValueError("budget must be at least 100 evaluations")
    rng = rng if rng is not None else np.random.default_rng(0)
    t0 = time.perf_counter()
    n = belief.n_robots
    score = _Scorer(belief, nm, weights)
    n_elite = max(1, int(round(population * elite_frac)))
    mean = np.zeros((n, 2))
    std = np.full((n, 2), u_max)
    best, best_u = math.inf, np.zeros((n, 2))
    prev_elite = math.inf
    stalls = 0
    while score.count + population <= budget:
        raw = mean + std * rng.standard_normal((population, n, 2))
        samples = _project_balls(raw, u_max)
        scores = np.array([score(belief.robot_means + dt * s) for s in samples])
        order = np.argsort(scores, kind="stable")
        if scores[order[0]] < best:
            best, best_u = float(scores[order[0]]), samples[order[0]].copy()
        # Refit on the unprojected draws so the mean can sit outside the ball
        # and keep pointing at boundary optima instead of shrinking inward.
        elite = raw[order[:n_elite]]
        elite_mean = float(scores[order[:n_elite]].mean())
        mean = elite.mean(axis=0)
        std = elite.std(axis=0) + 1e-12
        stalls = stalls + 1 if abs(prev_elite - elite_mean) < tol else 0
        if stalls >= patience:
            break
        prev_elite = elite_mean
    return PlanResult(best_u, best, score.count, time.perf_counter() - t0)
