import dataclasses
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jointtrack.connectivity import build_graph, graph_with_gradient
from jointtrack.core import ScenarioConfig, validate_config
from jointtrack.safety_filter import (
    INFEASIBLE,
    OPTIMAL,
    DisconnectedAtEntry,
    Halfspace,
    build_constraints,
    filter_controls,
    project_feasible,
)
from conftest import make_belief
from oracles import qp_reference


def config(**kw):
    base = dict(n_robots=2, r_c=10.0, d_min=3.0, u_max=1.0)
    base.update(kw)
    return validate_config(ScenarioConfig(**base))


def random_problem(rng, n, k):
    """Halfspaces that the origin satisfies strictly, plus a desired input outside."""
    normals = rng.normal(size=(k, 2 * n))
    offsets = rng.uniform(0.05, 1.0, size=k)
    cons = [Halfspace(a, b) for a, b in zip(normals, offsets)]
    u_des = rng.normal(scale=2.0, size=2 * n)
    return u_des, cons


def test_constraint_count_for_three_robots():
    cfg = config(n_robots=3)
    means = np.array([[0, 0], [4, 0], [0, 4]], dtype=float)
    gs = graph_with_gradient(means, cfg.r_c, cfg.sigma_norm)
    cons, radius = build_constraints(means, gs, cfg)
    assert len(cons) == 4 and radius == cfg.u_max
    assert [c.label for c in cons][0] == "connectivity"


def test_pair_at_d_min_forbids_approach():
    cfg = config()
    means = np.array([[0.0, 0.0], [3.0, 0.0]])
    (col,), _ = build_constraints(means, None, cfg)
    assert col.offset == 0.0
    # dx = x0 - x1 = (-3, 0); approaching means u0 moving right or u1 moving left
    assert col.violation(np.array([0.1, 0.0, 0.0, 0.0])) > 0
    assert col.violation(np.array([-0.1, 0.0, 0.1, 0.0])) <= 0


def test_connectivity_halfspace_form():
    cfg = config(cbf_gamma_connectivity=1.0)
    means = np.array([[0.0, 0.0], [6.0, 0.0]])
    gs = graph_with_gradient(means, cfg.r_c, cfg.sigma_norm)
    conn = build_constraints(means, gs, cfg)[0][0]
    assert np.allclose(conn.normal, -gs.beta)
    assert conn.offset == pytest.approx(gs.lambda2 - cfg.eps_conn)


def test_zero_gradient_halfspace_is_vacuous():
    u = np.array([3.0, -4.0])
    res = project_feasible(u, [Halfspace(np.zeros(2), 0.5)], 10.0)
    assert res.status == OPTIMAL and np.array_equal(res.actual.reshape(-1), u)


def test_feasible_point_returned_unchanged():
    u = np.array([0.2, 0.1, -0.3, 0.0])
    res = project_feasible(u, [Halfspace(np.array([1.0, 0, 0, 0]), 1.0)], 1.0)
    assert np.array_equal(res.actual.reshape(-1), u)
    assert res.iterations <= 2 and res.perturbation == 0.0


def test_single_halfspace_closed_form_and_grid():
    n_vec, b = np.array([1.0, 2.0]), 0.5
    u_des = np.array([1.0, 1.0])
    res = project_feasible(u_des, [Halfspace(n_vec, b)], 100.0)
    closed = u_des - (n_vec @ u_des - b) / (n_vec @ n_vec) * n_vec
    assert np.allclose(res.actual.reshape(-1), closed, atol=1e-7)
    g = np.linspace(-2, 2, 801)
    X, Y = np.meshgrid(g, g)
    ok = n_vec[0] * X + n_vec[1] * Y <= b
    obj = np.where(ok, (X - u_des[0]) ** 2 + (Y - u_des[1]) ** 2, np.inf)
    k = np.argmin(obj)
    assert np.allclose([X.flat[k], Y.flat[k]], closed, atol=0.01)


def test_ball_scaling():
    res = project_feasible(np.array([2.0, 0.0, 0.0, -0.5]), [], 1.0)
    assert np.allclose(res.actual, [[1.0, 0.0], [0.0, -0.5]])


def test_matches_cvxpy_reference(rng):
    for _ in range(40):
        n = int(rng.integers(1, 6))
        u_des, cons = random_problem(rng, n, int(rng.integers(1, 2 * n + 2)))
        res = project_feasible(u_des, cons, 1.0)
        ref_u, ref_val, status = qp_reference(u_des, cons, 1.0)
        assert status == "optimal"
        ours = 0.5 * np.sum((res.actual.reshape(-1) - u_des) ** 2)
        assert ours == pytest.approx(ref_val, abs=1e-4)
        assert res.status == OPTIMAL


@given(st.integers(0, 2 ** 32 - 1))
def test_projection_is_idempotent_and_in_ball(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    u_des, cons = random_problem(rng, n, 3)
    first = project_feasible(u_des, cons, 1.0)
    again = project_feasible(first.actual.reshape(-1), cons, 1.0)
    assert np.allclose(again.actual, first.actual, atol=1e-6)
    assert np.all(np.linalg.norm(first.actual, axis=1) <= 1.0 + 1e-9)
    if first.status == OPTIMAL:
        assert all(s >= -1e-6 for s in first.slacks)


def test_infeasible_problem_still_honours_ball():
    # u0 >= 5 cannot hold inside the unit ball
    cons = [Halfspace(np.array([-1.0, 0.0]), -5.0)]
    res = project_feasible(np.array([0.0, 3.0]), cons, 1.0, max_iters=200)
    assert res.status == INFEASIBLE
    assert np.linalg.norm(res.actual) <= 1.0 + 1e-9


def test_zero_normal_negative_offset_is_infeasible():
    res = project_feasible(np.array([0.5, 0.0]), [Halfspace(np.zeros(2), -1.0)], 1.0)
    assert res.status == INFEASIBLE


def test_bad_tolerance_rejected():
    with pytest.raises(ValueError):
        project_feasible(np.zeros(2), [], 1.0, tol=0.0)


def test_zero_desired_stays_zero():
    cfg = config(n_robots=3)
    b = make_belief([[0, 0], [4, 0], [0, 4]], [[9, 9]])
    res = filter_controls(np.zeros((3, 2)), b, cfg)
    assert np.array_equal(res.actual, np.zeros((3, 2)))
    assert res.status == OPTIMAL


def test_head_on_pair_keeps_separation_rate():
    cfg = config()
    means = np.array([[0.0, 0.0], [3.1, 0.0]])
    b = make_belief(means, [[1, 5]])
    res = filter_controls(np.array([[1.0, 0.0], [-1.0, 0.0]]), b, cfg)
    dx = means[0] - means[1]
    h = dx @ dx - cfg.d_min ** 2
    rate = dx @ (res.actual[0] - res.actual[1])
    assert rate >= -0.5 * h ** 3 - 1e-6
    assert res.perturbation > 0


def test_pair_near_range_limit_keeps_connectivity_row():
    cfg = config(cbf_gamma_connectivity=1.0)
    means = np.array([[0.0, 0.0], [9.9, 0.0]])
    b = make_belief(means, [[5, 5]])
    res = filter_controls(np.array([[-1.0, 0.0], [1.0, 0.0]]), b, cfg)
    gs = graph_with_gradient(means, cfg.r_c, cfg.sigma_norm)
    assert -gs.beta @ res.actual.reshape(-1) <= gs.lambda2 - cfg.eps_conn + 1e-6
    assert res.slacks[0] == pytest.approx(0.0, abs=1e-6)  # active


def test_disconnected_entry_warns_and_solves():
    cfg = config()
    b = make_belief([[0, 0], [15, 0]], [[5, 5]])
    with pytest.warns(DisconnectedAtEntry):
        res = filter_controls(np.array([[0.5, 0.0], [0.0, 0.0]]), b, cfg)
    assert res.disconnected_at_entry
    assert np.all(np.linalg.norm(res.actual, axis=1) <= cfg.u_max + 1e-9)


def test_filter_accepts_plan_like_objects():
    cfg = config()
    b = make_belief([[0, 0], [5, 0]], [[5, 5]])
    plan = type("Plan", (), {"desired": np.array([[0.0, 0.3], [0.0, 0.3]])})()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = filter_controls(plan, b, cfg)
    assert np.allclose(res.actual, plan.desired)


def test_backtracking_disabled_by_default():
    assert ScenarioConfig().safety_backtracks == 0


def test_backtracking_keeps_discrete_step_safe():
    # Sideways motion at the edge of communication range passes the linear
    # connectivity row but breaks the edge after a full step.
    base = config(cbf_gamma_connectivity=0.05)
    means = np.array([[0.0, 0.0], [9.5, 0.0]])
    b = make_belief(means, [[5, 5]])
    u_des = np.array([[0.0, 1.0], [0.0, -1.0]])
    plain = filter_controls(u_des, b, base)
    stepped = build_graph(means + plain.actual, base.r_c, base.sigma_norm).lambda2
    safe_cfg = dataclasses.replace(base, safety_backtracks=5)
    safe = filter_controls(u_des, b, safe_cfg)
    lam = build_graph(means, base.r_c, base.sigma_norm).lambda2
    floor = base.eps_conn + (1 - base.cbf_gamma_connectivity) * (lam - base.eps_conn)
    assert stepped < floor
    after = build_graph(means + safe.actual, base.r_c, base.sigma_norm).lambda2
    assert after >= floor
    assert np.linalg.norm(safe.actual) < np.linalg.norm(plain.actual)
    # Scaling only: the safe control is parallel to the projected one.
    ratio = np.linalg.norm(safe.actual) / np.linalg.norm(plain.actual)
    assert np.allclose(safe.actual, ratio * plain.actual)
    assert math.log2(1 / ratio) == pytest.approx(round(math.log2(1 / ratio)))


def test_backtracking_leaves_safe_steps_alone():
    base = config(safety_backtracks=5)
    b = make_belief([[0, 0], [5, 0]], [[5, 5]])
    u_des = np.array([[0.0, 0.5], [0.0, 0.5]])
    assert np.array_equal(filter_controls(u_des, b, base).actual, u_des)
