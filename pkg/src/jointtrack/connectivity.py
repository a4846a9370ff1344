"""Weighted communication graph, algebraic connectivity and its gradient."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

SIMPLE_GAP = 1e-8


@dataclass(frozen=True)
class GraphState:
    adjacency: np.ndarray
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    lambda2: float
    fiedler: np.ndarray
    beta: np.ndarray | None = None
    repeated_lambda2: bool = False


def adjacency_weight(d: float, r_c: float, sigma: float) -> float:
    """Edge weight ``exp((r_c^2 - d^2)^2 / sigma) - 1`` inside range, else 0."""
    if d > r_c:
        return 0.0
    s = r_c * r_c - d * d
    return math.expm1(s * s / sigma)


def _pairwise(points: np.ndarray):
    diff = points[:, None, :] - points[None, :, :]
    return diff, np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def adjacency_matrix(points, r_c: float, sigma: float) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    _, dist = _pairwise(points)
    s = r_c * r_c - dist * dist
    A = np.where(dist <= r_c, np.expm1(s * s / sigma), 0.0)
    np.fill_diagonal(A, 0.0)
    return A


def build_graph(robot_means, r_c: float, sigma: float) -> GraphState:
    """Laplacian spectrum of the weighted graph over estimated positions.

    The Fiedler vector's sign is fixed so that its first component with
    magnitude above 1e-9 is positive.
    """
    points = np.asarray(robot_means, dtype=float).reshape(-1, 2)
    if len(points) < 2:
        raise ValueError("a graph needs at least two robots")
    A = adjacency_matrix(points, r_c, sigma)
    L = np.diag(A.sum(axis=1)) - A
    w, V = np.linalg.eigh(L)
    v2 = V[:, 1].copy()
    lead = np.flatnonzero(np.abs(v2) > 1e-9)
    if lead.size and v2[lead[0]] < 0:
        v2 = -v2
    repeated = len(w) > 2 and (w[2] - w[1]) < SIMPLE_GAP
    return GraphState(A, L, w, float(w[1]), v2, None, bool(repeated))


def lambda2_gradient(gs: GraphState, robot_means, r_c: float, sigma: float) -> np.ndarray:
    """d lambda2 / d x_i for every robot, stacked robot-major into a 2N vector.

    Uses ``sum_j (d a_ij / d x_i) (v_i - v_j)^2`` with the Fiedler vector ``v``.
    When ``gs.repeated_lambda2`` is set the result is still returned but is
    not a true gradient.
    """
    points = np.asarray(robot_means, dtype=float).reshape(-1, 2)
    diff, dist = _pairwise(points)
    s = r_c * r_c - dist * dist
    inside = dist <= r_c
    np.fill_diagonal(inside, False)
    # d a_ij / d x_i = -(4 s / sigma) exp(s^2 / sigma) (x_i - x_j)
    coef = np.where(inside, -(4.0 * s / sigma) * np.exp(s * s / sigma), 0.0)
    v = gs.fiedler
    gap2 = (v[:, None] - v[None, :]) ** 2
    beta = np.einsum("ij,ijk->ik", coef * gap2, diff)
    return beta.reshape(-1)


def graph_with_gradient(robot_means, r_c: float, sigma: float) -> GraphState:
    gs = build_graph(robot_means, r_c, sigma)
    beta = lambda2_gradient(gs, robot_means, r_c, sigma)
    return GraphState(gs.adjacency, gs.laplacian, gs.eigenvalues, gs.lambda2, gs.fiedler, beta,
                      gs.repeated_lambda2)


def is_connected_bfs(robot_means, r_c: float) -> bool:
    """Breadth-first search on the unweighted disk graph (edge iff distance <= r_c)."""
    pts = [tuple(p) for p in np.asarray(robot_means, dtype=float).reshape(-1, 2)]
    n = len(pts)
    if n <= 1:
        return True
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in range(n):
            if j not in seen and math.dist(pts[i], pts[j]) <= r_c:
                seen.add(j)
                queue.append(j)
    return len(seen) == n


def min_pairwise_distance(points) -> float:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) < 2:
        return math.inf
    _, dist = _pairwise(points)
    iu = np.triu_indices(len(points), k=1)
    return float(dist[iu].min())
