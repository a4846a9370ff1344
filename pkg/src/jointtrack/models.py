"""Ground-truth motion and the range-bearing / GPS sensing models."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import DegenerateGeometry, ScenarioConfig, as_vec2

MIN_SEPARATION = 1e-9

RANGE_BEARING = "range_bearing"
GPS = "gps"

# (group, index), e.g. ("robot", 0) or ("target", 3)
EntityId = Tuple[str, int]


@dataclass(frozen=True)
class NoiseModel:
    q_robot: float = 0.01
    q_target: float = 0.01
    sigma_range: float = 0.1
    sigma_bearing: float = 0.05
    sigma_gps: float = 0.5
    range_noise_scale: float = 0.0

    def __post_init__(self):
        for name in ("q_robot", "q_target", "sigma_range", "sigma_bearing", "sigma_gps", "range_noise_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> NoiseModel:
        return cls(cfg.q_robot, cfg.q_target if cfg.q_target is not None else 0.01, cfg.sigma_range,
                   cfg.sigma_bearing, cfg.sigma_gps, cfg.range_noise_scale)


@dataclass(frozen=True)
class Measurement:
    kind: str
    value: np.ndarray
    noise_cov: np.ndarray
    observer: EntityId
    observed: EntityId


def wrap_angle(a):
    """Wrap to (-pi, pi]; works elementwise on arrays."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def propagate_true_state(x, u, noise_sample, dt: float = 1.0) -> np.ndarray:
    """Single-integrator step ``x + dt*u + w``."""
    return as_vec2(x) + dt * as_vec2(u) + as_vec2(noise_sample)


def range_bearing(observer, observed) -> tuple[float, float]:
    d = as_vec2(observed) - as_vec2(observer)
    r = math.hypot(d[0], d[1])
    if r <= MIN_SEPARATION:
        raise DegenerateGeometry(f"entities coincide (distance {r:.3g})")
    return r, math.atan2(d[1], d[0])


def range_bearing_jacobians(observer, observed) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dh/d observed, dh/d observer)``; the second is the negated first."""
    d = as_vec2(observed) - as_vec2(observer)
    r2 = d @ d
    if r2 <= MIN_SEPARATION ** 2:
        raise DegenerateGeometry(f"entities coincide (distance {math.sqrt(r2):.3g})")
    r = math.sqrt(r2)
    H = np.array([[d[0] / r, d[1] / r],
                  [-d[1] / r2, d[0] / r2]])
    return H, -H


def range_bearing_batch(observers: np.ndarray, observed: np.ndarray):
    """Vectorised range-bearing prediction and observed-side Jacobians.

    ``observers`` and ``observed`` are (K, 2). Returns ``(z, H)`` with ``z`` of
    shape (K, 2) and ``H`` of shape (K, 2, 2).
    """
    d = np.asarray(observed, dtype=float) - np.asarray(observers, dtype=float)
    r2 = np.einsum("ki,ki->k", d, d)
    if np.any(r2 <= MIN_SEPARATION ** 2):
        raise DegenerateGeometry("entities coincide")
    r = np.sqrt(r2)
    z = np.stack([r, np.arctan2(d[:, 1], d[:, 0])], axis=1)
    H = np.empty((len(d), 2, 2))
    H[:, 0, 0] = d[:, 0] / r
    H[:, 0, 1] = d[:, 1] / r
    H[:, 1, 0] = -d[:, 1] / r2
    H[:, 1, 1] = d[:, 0] / r2
    return z, H


def measurement_noise_cov(kind: str, observer, observed, nm: NoiseModel) -> np.ndarray:
    if kind == GPS:
        return np.eye(2) * nm.sigma_gps ** 2
    if kind != RANGE_BEARING:
        raise ValueError(f"unknown measurement kind {kind!r}")
    d = as_vec2(observed) - as_vec2(observer)
    return np.diag([nm.sigma_range ** 2 * (1.0 + nm.range_noise_scale * (d @ d)), nm.sigma_bearing ** 2])


def range_bearing_noise_batch(observers: np.ndarray, observed: np.ndarray, nm: NoiseModel) -> np.ndarray:
    """Diagonal variances (K, 2) of range-bearing noise for K pairs."""
    d = np.asarray(observed, dtype=float) - np.asarray(observers, dtype=float)
    out = np.empty((len(d), 2))
    out[:, 0] = nm.sigma_range ** 2 * (1.0 + nm.range_noise_scale * np.einsum("ki,ki->k", d, d))
    out[:, 1] = nm.sigma_bearing ** 2
    return out


def sample_process_noise(rng: np.random.Generator, nm: NoiseModel, entity_kind: str) -> np.ndarray:
    if entity_kind == "robot":
        q = nm.q_robot
    elif entity_kind == "target":
        q = nm.q_target
    else:
        raise ValueError(f"unknown entity kind {entity_kind!r}")
    return rng.normal(0.0, math.sqrt(q), size=2)


def sense_range_bearing(rng: np.random.Generator, observer, observed, nm: NoiseModel,
                        observer_id: EntityId, observed_id: EntityId) -> Measurement:
    r, b = range_bearing(observer, observed)
    R = measurement_noise_cov(RANGE_BEARING, observer, observed, nm)
    noise = rng.normal(0.0, 1.0, size=2) * np.sqrt(np.diag(R))
    value = np.array([r + noise[0], wrap_angle(b + noise[1])])
    return Measurement(RANGE_BEARING, value, R, observer_id, observed_id)


def sense_gps(rng: np.random.Generator, position, nm: NoiseModel, robot: int) -> Measurement:
    R = measurement_noise_cov(GPS, position, position, nm)
    value = as_vec2(position) + rng.normal(0.0, nm.sigma_gps, size=2)
    return Measurement(GPS, value, R, ("robot", robot), ("robot", robot))
