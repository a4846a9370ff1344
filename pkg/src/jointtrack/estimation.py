"""Decoupled EKF stacks for target tracking and robot localization.

Targets and robots are filtered separately; the joint covariance is kept
block-diagonal per entity. Robot-target cross terms are not modelled, so the
target update linearises only with respect to target positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .core import JointBelief, ShapeError, SingularInnovation, block_diag_covs, diag_blocks
from .models import (
    GPS,
    RANGE_BEARING,
    Measurement,
    NoiseModel,
    range_bearing_batch,
    range_bearing_noise_batch,
    wrap_angle,
)

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class StackedMeasurementSet:
    measurements: tuple[Measurement, ...]
    H: np.ndarray
    R: np.ndarray
    residual: np.ndarray


def predict_targets(belief: JointBelief, nm: NoiseModel) -> JointBelief:
    """Identity motion for target means; covariance grows by ``q_target * I``.

    Scripted target controls are unknown to the tracker.
    """
    return belief.replace(target_covs=belief.target_covs + nm.q_target * np.eye(2))


def predict_robots(belief: JointBelief, u, nm: NoiseModel, dt: float = 1.0) -> JointBelief:
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    if len(u) != belief.n_robots:
        raise ShapeError(f"expected {belief.n_robots} controls, got {len(u)}")
    return belief.replace(robot_means=belief.robot_means + dt * u,
                          robot_covs=belief.robot_covs + nm.q_robot * np.eye(2))


def _factor_innovation(S: np.ndarray):
    try:
        c, lower = sla.cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation("innovation covariance is not positive definite") from exc
    anorm = np.abs(S).sum(axis=0).max()
    rcond, info = sla.lapack.dpocon(c, anorm, uplo="L")
    if info != 0 or rcond * MAX_CONDITION < 1.0:
        raise SingularInnovation(f"innovation covariance condition number exceeds {MAX_CONDITION:.0e}")
    return c, lower


def joseph_update(P: np.ndarray, H: np.ndarray, R: np.ndarray, residual=None):
    """Kalman update with the Joseph-form covariance.

    Returns ``(correction, P_post)`` where ``correction = K @ residual`` (zeros
    when no residual is given). Works for any state/measurement dimension.
    ``R`` may be a full matrix or a 1-D vector of independent variances.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.asarray(R, dtype=float)
    PHt = P @ H.T
    S = H @ PHt
    if R.ndim == 1:
        S[np.diag_indices_from(S)] += R
    else:
        S += np.atleast_2d(R)
    S = 0.5 * (S + S.T)
    cho = _factor_innovation(S)
    K = sla.cho_solve(cho, PHt.T, check_finite=False).T
    I_KH = np.eye(P.shape[0]) - K @ H
    KRKt = (K * R) @ K.T if R.ndim == 1 else K @ np.atleast_2d(R) @ K.T
    P_post = I_KH @ P @ I_KH.T + KRKt
    P_post = 0.5 * (P_post + P_post.T)
    if residual is None:
        return np.zeros(P.shape[0]), P_post
    return K @ np.asarray(residual, dtype=float).reshape(-1), P_post


def _target_geometry(robot_means: np.ndarray, target_means: np.ndarray, nm: NoiseModel):
    """Predicted measurements, observed-side Jacobians and noise variances.

    Pairs are ordered target-major: for each target j, robots 0..N-1.
    """
    n, m = len(robot_means), len(target_means)
    obs = np.tile(robot_means, (m, 1))
    tgt = np.repeat(target_means, n, axis=0)
    z, H = range_bearing_batch(obs, tgt)
    var = range_bearing_noise_batch(obs, tgt, nm)
    return z, H, var


def _target_stack(robot_means, target_means, nm):
    n, m = len(robot_means), len(target_means)
    z, Hb, var = _target_geometry(robot_means, target_means, nm)
    H = np.zeros((2 * n * m, 2 * m))
    for j in range(m):
        for i in range(n):
            row = 2 * (j * n + i)
            H[row:row + 2, 2 * j:2 * j + 2] = Hb[j * n + i]
    return z, H, var.reshape(-1)


def stack_target_measurements(robot_means, target_means, raw: Sequence[Measurement],
                              nm: NoiseModel) -> StackedMeasurementSet:
    """Stack all robot->target range-bearing measurements (target-major).

    Jacobians are taken with respect to target positions only and evaluated at
    the prior means, as is the measurement noise.
    """
    robot_means = np.asarray(robot_means, dtype=float).reshape(-1, 2)
    target_means = np.asarray(target_means, dtype=float).reshape(-1, 2)
    n, m = len(robot_means), len(target_means)
    by_pair = {}
    for meas in raw:
        if meas.kind == RANGE_BEARING and meas.observer[0] == "robot" and meas.observed[0] == "target":
            by_pair[(meas.observer[1], meas.observed[1])] = meas
    missing = [(i, j) for j in range(m) for i in range(n) if (i, j) not in by_pair]
    if missing:
        raise ShapeError(f"missing robot->target measurements for pairs {missing[:5]}")
    if len(by_pair) != n * m:
        raise ShapeError("measurements reference unknown robots or targets")
    ordered = tuple(by_pair[(i, j)] for j in range(m) for i in range(n))
    z_pred, H, var = _target_stack(robot_means, target_means, nm)
    z = np.array([meas.value for meas in ordered])
    resid = z - z_pred
    resid[:, 1] = wrap_angle(resid[:, 1])
    return StackedMeasurementSet(ordered, H, np.diag(var), resid.reshape(-1))


def ekf_update_targets(prior: JointBelief, ms: StackedMeasurementSet) -> JointBelief:
    P = block_diag_covs(prior.target_covs)
    dx, P_post = joseph_update(P, ms.H, ms.R, ms.residual)
    return prior.replace(target_means=prior.target_means + dx.reshape(-1, 2),
                         target_covs=diag_blocks(P_post))


def _robot_stack(robot_means, nm):
    """Jacobian and noise for robot localization, observer-major.

    Observer i contributes blocks for k = 0..N-1 in index order; k == i is the
    GPS self-fix, otherwise the range-bearing of robot k.
    """
    n = len(robot_means)
    pairs = [(i, k) for i in range(n) for k in range(n) if k != i]
    H = np.zeros((2 * n * n, 2 * n))
    var = np.empty((n * n, 2))
    z_pred = np.empty((n * n, 2))
    gps_var = nm.sigma_gps ** 2
    if pairs:
        ii = np.array([p[0] for p in pairs])
        kk = np.array([p[1] for p in pairs])
        z_rb, H_rb = range_bearing_batch(robot_means[ii], robot_means[kk])
        var_rb = range_bearing_noise_batch(robot_means[ii], robot_means[kk], nm)
    p = 0
    for i in range(n):
        for k in range(n):
            blk = i * n + k
            row = 2 * blk
            if k == i:
                H[row:row + 2, 2 * i:2 * i + 2] = np.eye(2)
                var[blk] = gps_var
                z_pred[blk] = robot_means[i]
            else:
                H[row:row + 2, 2 * k:2 * k + 2] = H_rb[p]
                H[row:row + 2, 2 * i:2 * i + 2] = -H_rb[p]
                var[blk] = var_rb[p]
                z_pred[blk] = z_rb[p]
                p += 1
    return z_pred, H, var.reshape(-1)


def stack_robot_measurements(robot_means, raw: Sequence[Measurement], nm: NoiseModel) -> StackedMeasurementSet:
    robot_means = np.asarray(robot_means, dtype=float).reshape(-1, 2)
    n = len(robot_means)
    by_pair = {}
    for meas in raw:
        if meas.observer[0] != "robot" or meas.observed[0] != "robot":
            continue
        i, k = meas.observer[1], meas.observed[1]
        if (meas.kind == GPS) != (i == k):
            raise ShapeError(f"measurement kind {meas.kind} does not match pair ({i}, {k})")
        by_pair[(i, k)] = meas
    missing = [(i, k) for i in range(n) for k in range(n) if (i, k) not in by_pair]
    if missing:
        raise ShapeError(f"missing robot measurements for pairs {missing[:5]}")
    if len(by_pair) != n * n:
        raise ShapeError("measurements reference unknown robots")
    ordered = tuple(by_pair[(i, k)] for i in range(n) for k in range(n))
    z_pred, H, var = _robot_stack(robot_means, nm)
    z = np.array([meas.value for meas in ordered])
    resid = z - z_pred
    rb = np.array([meas.kind == RANGE_BEARING for meas in ordered])
    resid[rb, 1] = wrap_angle(resid[rb, 1])
    return StackedMeasurementSet(ordered, H, np.diag(var), resid.reshape(-1))


def ekf_update_robots(prior: JointBelief, ms: StackedMeasurementSet) -> JointBelief:
    P = block_diag_covs(prior.robot_covs)
    dx, P_post = joseph_update(P, ms.H, ms.R, ms.residual)
    return prior.replace(robot_means=prior.robot_means + dx.reshape(-1, 2),
                         robot_covs=diag_blocks(P_post))


def _target_posterior_covs(robot_means, target_means, target_covs, nm):
    # Each target's rows touch only its own columns and the prior is
    # block-diagonal, so the stacked update splits exactly per target.
    n, m = len(robot_means), len(target_means)
    _, Hb, var = _target_geometry(robot_means, target_means, nm)
    out = np.empty_like(target_covs)
    for j in range(m):
        H = Hb[j * n:(j + 1) * n].reshape(2 * n, 2)
        out[j] = joseph_update(target_covs[j], H, var[j * n:(j + 1) * n].reshape(-1))[1]
    return out


def oracle_posterior_traces(hypothetical_robot_means, belief: JointBelief, nm: NoiseModel) -> tuple[float, float]:
    """Posterior covariance traces if the robots stood at the given positions.

    Runs both predictions and both covariance-only updates; measurement values
    never enter a covariance update, so no residuals are needed.
    """
    rm = np.asarray(hypothetical_robot_means, dtype=float).reshape(-1, 2)
    if len(rm) != belief.n_robots:
        raise ShapeError("hypothetical positions must cover every robot")
    P_T = belief.target_covs + nm.q_target * np.eye(2)
    P_R = belief.robot_covs + nm.q_robot * np.eye(2)
    post_T = _target_posterior_covs(rm, belief.target_means, P_T, nm)
    _, H, var = _robot_stack(rm, nm)
    P_post = joseph_update(block_diag_covs(P_R), H, var)[1]
    return float(np.trace(P_post)), float(np.trace(post_T, axis1=1, axis2=2).sum())
