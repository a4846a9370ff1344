"""Barrier-function safety filter.

The filtered control is the Euclidean projection of the desired stacked
control onto the intersection of

* one connectivity halfspace ``-dt * beta . u <= g_c * (lambda2 - eps)``,
* one collision halfspace per robot pair,
  ``dt * dx_ij . (u_i - u_j) + g_d * 0.5 * (|dx_ij|^2 - d_min^2)^3 >= 0``,
* the product of per-robot balls ``|u_i| <= u_max``,

computed with Dykstra's alternating projections.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .connectivity import GraphState, build_graph, graph_with_gradient
from .core import JointBelief, ScenarioConfig

OPTIMAL = "optimal"
MAX_ITERS = "max_iters"
INFEASIBLE = "infeasible_fallback"

FEAS_TOL = 1e-6
FALLBACK_TOL = 1e-4


class DisconnectedAtEntry(UserWarning):
    """The estimated graph was already below the connectivity threshold."""


@dataclass(frozen=True)
class Halfspace:
    """Feasible iff ``normal . u <= offset``."""

    normal: np.ndarray
    offset: float
    label: str = ""

    def violation(self, u: np.ndarray) -> float:
        return float(self.normal @ u - self.offset)


@dataclass(frozen=True)
class FilterResult:
    actual: np.ndarray  # (N, 2)
    perturbation: float
    iterations: int
    status: str
    slacks: tuple[float, ...] = ()
    disconnected_at_entry: bool = False

    @property
    def min_slack(self) -> float:
        return min(self.slacks, default=math.inf)


def build_constraints(robot_means, gs: GraphState | None, cfg: ScenarioConfig) -> tuple[list[Halfspace], float]:
    """Connectivity and collision halfspaces plus the per-robot ball radius."""
    x = np.asarray(robot_means, dtype=float).reshape(-1, 2)
    n = len(x)
    dt = cfg.dt
    cons: list[Halfspace] = []
    if gs is not None:
        beta = gs.beta
        cons.append(Halfspace(-dt * beta, cfg.cbf_gamma_connectivity * (gs.lambda2 - cfg.eps_conn), "connectivity"))
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            h = dx @ dx - cfg.d_min ** 2
            normal = np.zeros(2 * n)
            normal[2 * i:2 * i + 2] = -dt * dx
            normal[2 * j:2 * j + 2] = dt * dx
            cons.append(Halfspace(normal, cfg.cbf_gamma_collision * 0.5 * h ** 3, f"collision_{i}_{j}"))
    return cons, cfg.u_max


def _ball_projection(u: np.ndarray, radius: float) -> np.ndarray:
    blocks = u.reshape(-1, 2)
    norms = np.sqrt(np.einsum("ij,ij->i", blocks, blocks))
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return (blocks * scale[:, None]).reshape(-1)


def _max_violation(u, normals, offsets, radius) -> float:
    worst = 0.0
    if len(offsets):
        worst = max(worst, float(np.max(normals @ u - offsets)))
    norms = np.linalg.norm(u.reshape(-1, 2), axis=1)
    return max(worst, float(np.max(norms - radius)))


def project_feasible(u_des, constraints: Sequence[Halfspace], ball_radius: float, tol: float = 1e-8,
                     max_iters: int = 10000) -> FilterResult:
    """Closest point to ``u_des`` satisfying every halfspace and ball.

    Halfspaces that no point of the ball product can violate are dropped
    first; this does not change the projection. A halfspace with zero normal
    and negative offset can never hold and forces the fallback path.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    u_des = np.asarray(u_des, dtype=float).reshape(-1)
    n = len(u_des) // 2
    impossible = False
    active = []
    for c in constraints:
        blocks = c.normal.reshape(-1, 2)
        reach = ball_radius * float(np.linalg.norm(blocks, axis=1).sum())
        if reach <= c.offset:
            continue
        if not np.any(c.normal):
            impossible = True
            continue
        active.append(c)
    normals = np.array([c.normal for c in active]).reshape(len(active), 2 * n)
    offsets = np.array([c.offset for c in active])
    sq_norms = np.einsum("ij,ij->i", normals, normals)

    def finish(u, iters, status):
        u = _ball_projection(u, ball_radius)
        slacks = tuple(float(c.offset - c.normal @ u) for c in constraints)
        return FilterResult(u.reshape(n, 2), float(np.linalg.norm(u - u_des)), iters, status, slacks)

    # Inputs already feasible to solver tolerance come back unchanged, which
    # makes the projection idempotent. The balls are checked exactly.
    in_balls = bool(np.all(np.linalg.norm(u_des.reshape(-1, 2), axis=1) <= ball_radius))
    if not impossible and in_balls and _max_violation(u_des, normals, offsets, math.inf) <= FEAS_TOL:
        return finish(u_des.copy(), 1, OPTIMAL)

    k = len(active)
    x = u_des.copy()
    incr = np.zeros((k + 1, 2 * n))
    iters = 0
    while iters < max_iters:
        iters += 1
        x_start = x
        incr_start = incr.copy()
        for c in range(k):
            y = x + incr[c]
            excess = normals[c] @ y - offsets[c]
            x_new = y - (excess / sq_norms[c]) * normals[c] if excess > 0 else y
            incr[c] = y - x_new
            x = x_new
        y = x + incr[k]
        x_new = _ball_projection(y, ball_radius)
        incr[k] = y - x_new
        x = x_new
        # The iterate can stall for whole cycles while the increments still
        # move, so both must settle before declaring convergence.
        if np.max(np.abs(x - x_start)) < tol and np.max(np.abs(incr - incr_start)) < tol:
            viol = _max_violation(x, normals, offsets, ball_radius)
            if not impossible and viol <= FEAS_TOL:
                return finish(x, iters, OPTIMAL)
            if impossible or viol > FALLBACK_TOL:
                return finish(x, iters, INFEASIBLE)
    viol = _max_violation(x, normals, offsets, ball_radius)
    return finish(x, iters, INFEASIBLE if impossible or viol > FALLBACK_TOL else MAX_ITERS)


def _step_is_safe(means, moved, gs: GraphState | None, cfg: ScenarioConfig) -> bool:
    """Discrete-step check at the predicted positions ``moved``.

    No pair may end closer than ``min(d_min, current distance)`` and, when a
    graph is given, lambda2 must stay above ``eps + (1 - g_c) * (lambda2 - eps)``.
    """
    if len(means) >= 2:
        iu = np.triu_indices(len(means), k=1)
        now = np.linalg.norm(means[:, None] - means[None, :], axis=-1)[iu]
        nxt = np.linalg.norm(moved[:, None] - moved[None, :], axis=-1)[iu]
        if np.any(nxt < np.minimum(now, cfg.d_min)):
            return False
    if gs is None:
        return True
    target = cfg.eps_conn + (1.0 - cfg.cbf_gamma_connectivity) * (gs.lambda2 - cfg.eps_conn)
    return build_graph(moved, cfg.r_c, cfg.sigma_norm).lambda2 >= target


def _backtrack(u_des, res: FilterResult, constraints, means, gs: GraphState | None,
               cfg: ScenarioConfig) -> FilterResult:
    """Shrink the filtered control until the discrete step is safe.

    The barrier halfspaces are first-order and can be optimistic for large
    steps (sideways motion stretches edges at second order, the cubic
    collision term admits overshoot far from the boundary). The scale halves
    up to ``cfg.safety_backtracks`` times and falls back to zero.
    """
    u = res.actual
    scale = 1.0
    for _ in range(cfg.safety_backtracks + 1):
        if _step_is_safe(means, means + cfg.dt * scale * u, gs, cfg):
            break
        scale *= 0.5
    else:
        scale = 0.0
    if scale == 1.0:
        return res
    flat = scale * u.reshape(-1)
    slacks = tuple(float(c.offset - c.normal @ flat) for c in constraints)
    return FilterResult(scale * u, float(np.linalg.norm(flat - u_des)), res.iterations, res.status, slacks)


def filter_controls(desired, belief: JointBelief, cfg: ScenarioConfig) -> FilterResult:
    """Run the full barrier filter on a plan (a PlanResult or an (N, 2) array)."""
    u_des = getattr(desired, "desired", desired)
    u_des = np.asarray(u_des, dtype=float).reshape(-1)
    means = belief.robot_means
    gs = None
    entry_disconnected = False
    if belief.n_robots >= 2:
        gs = graph_with_gradient(means, cfg.r_c, cfg.sigma_norm)
        if gs.lambda2 < cfg.eps_conn:
            entry_disconnected = True
            warnings.warn(f"estimated lambda2={gs.lambda2:.3g} below eps", DisconnectedAtEntry, stacklevel=2)
    cons, radius = build_constraints(means, gs, cfg)
    res = project_feasible(u_des, cons, radius)
    if cfg.safety_backtracks:
        res = _backtrack(u_des, res, cons, means, None if entry_disconnected else gs, cfg)
    if entry_disconnected:
        res = FilterResult(res.actual, res.perturbation, res.iterations, res.status, res.slacks, True)
    return res
