import numpy as np
import pytest

from jointtrack.baseline_compare import (
    CSV_COLUMNS,
    METHODS,
    compare,
    loglog_slope,
    single_step_instance,
    summarize,
)
from jointtrack.models import NoiseModel
from jointtrack.planner import exhaustive_select, greedy_select, heading_actions


def test_prior_covariances():
    inst = single_step_instance(3, 0)
    assert np.trace(inst.prior.target_covs, axis1=1, axis2=2) == pytest.approx([20.0] * 3)
    assert np.trace(inst.prior.robot_covs, axis1=1, axis2=2) == pytest.approx([2.0] * 3)


def test_instance_is_updated_once():
    inst = single_step_instance(4, 2)
    assert inst.belief.trace_targets() < inst.prior.trace_targets()
    assert inst.belief.trace_robots() < inst.prior.trace_robots()
    assert inst.true_robots.shape == inst.true_targets.shape == (4, 2)
    assert np.all((inst.true_robots >= 0) & (inst.true_robots <= 10))


def test_same_seed_same_instance():
    a, b = single_step_instance(3, 7), single_step_instance(3, 7)
    assert np.array_equal(a.belief.robot_covs, b.belief.robot_covs)
    assert np.array_equal(a.belief.target_means, b.belief.target_means)
    assert not np.array_equal(a.true_robots, single_step_instance(3, 8).true_robots)


def test_rejects_empty_instance():
    with pytest.raises(ValueError):
        single_step_instance(0, 0)


def test_single_robot_greedy_matches_exhaustive():
    nm = NoiseModel()
    inst = single_step_instance(1, 0)
    acts = [heading_actions(1.5, 8)]
    assert greedy_select(inst.belief, acts, nm).predicted_trace == pytest.approx(
        exhaustive_select(inst.belief, acts, nm).predicted_trace, rel=1e-12)
    rows = {r.method: r for r in compare([1], 1)}
    assert rows["greedy"].trace == pytest.approx(exhaustive_select(inst.belief, acts, nm).predicted_trace)


def test_table_shape_and_counts():
    rows = compare([1, 3], 2, budget_per_dim=50)
    assert len(rows) == 2 * 2 * len(METHODS)
    for r in rows:
        if r.method == "greedy":
            assert r.evaluations == 9 * r.n
        if r.method == "random":
            assert r.evaluations == 1
        if r.method == "continuous":
            assert r.evaluations <= max(100, 50 * 2 * r.n)
        assert r.trace >= 0 and r.seconds >= 0
    assert set(CSV_COLUMNS) <= set(vars(rows[0]))


def test_compare_is_reproducible():
    strip = lambda rows: [(r.n, r.trial, r.method, r.trace, r.evaluations) for r in rows]  # noqa: E731
    assert strip(compare([2], 2)) == strip(compare([2], 2))


def test_summary_schema():
    summary = summarize(compare([2], 3))
    assert list(summary) == ["2"]
    for method in METHODS:
        entry = summary["2"][method]
        assert entry["trials"] == 3
        assert set(entry) == {"trials", "trace_mean", "trace_std", "seconds_mean", "seconds_std"}


def test_loglog_slope_recovers_power():
    n = np.array([2, 4, 8, 16])
    assert loglog_slope(n, 0.01 * n ** 3) == pytest.approx(3.0)
