"""Shared numeric primitives, belief containers and scenario configuration."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

PSD_TOL = 1e-9
SYM_TOL = 1e-9
PLANNERS = ("greedy", "random", "continuous", "exhaustive")
SCRIPT_KINDS = ("stationary", "constant", "piecewise")


class ConfigError(ValueError):
    """A scenario configuration violates one of its invariants."""


class DegenerateGeometry(ValueError):
    """Observer and observed entity coincide, so bearing is undefined."""


class ShapeError(ValueError):
    """A measurement set does not cover the expected observer/observed pairs."""


class SingularInnovation(np.linalg.LinAlgError):
    """Innovation covariance is not safely invertible."""


def as_vec2(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(2)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector {a}")
    return a


def check_covariance(P: np.ndarray, name: str = "covariance") -> None:
    """Raise ValueError unless ``P`` is symmetric PSD within the global tolerances."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"{name} must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError(f"{name} has non-finite entries")
    if np.max(np.abs(P - P.T), initial=0.0) > SYM_TOL:
        raise ValueError(f"{name} is not symmetric")
    if P.size and np.linalg.eigvalsh(0.5 * (P + P.T))[0] < -PSD_TOL:
        raise ValueError(f"{name} is not positive semidefinite")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class EntityBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(as_vec2(self.mean)))
        cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        check_covariance(cov)
        object.__setattr__(self, "cov", _frozen(cov))


@dataclass(frozen=True)
class JointBelief:
    """Robot and target beliefs stored as stacked arrays.

    The joint covariance is block-diagonal in the per-entity 2x2 blocks:
    ``robot_covs[i]`` and ``target_covs[j]``. Cross-covariances are never kept.
    """

    robot_means: np.ndarray  # (N, 2)
    robot_covs: np.ndarray  # (N, 2, 2)
    target_means: np.ndarray  # (M, 2)
    target_covs: np.ndarray  # (M, 2, 2)

    def __post_init__(self):
        rm = np.asarray(self.robot_means, dtype=float).reshape(-1, 2)
        tm = np.asarray(self.target_means, dtype=float).reshape(-1, 2)
        rc = np.asarray(self.robot_covs, dtype=float).reshape(-1, 2, 2)
        tc = np.asarray(self.target_covs, dtype=float).reshape(-1, 2, 2)
        if len(rm) < 1 or len(tm) < 1:
            raise ValueError("need at least one robot and one target")
        if len(rc) != len(rm) or len(tc) != len(tm):
            raise ValueError("means and covariances disagree in count")
        if not (np.all(np.isfinite(rm)) and np.all(np.isfinite(tm))):
            raise ValueError("non-finite mean")
        for name, value in (("robot_means", rm), ("robot_covs", rc),
                            ("target_means", tm), ("target_covs", tc)):
            object.__setattr__(self, name, _frozen(value))

    @classmethod
    def from_entities(cls, robots: Sequence[EntityBelief], targets: Sequence[EntityBelief]) -> JointBelief:
        return cls(
            np.array([b.mean for b in robots]),
            np.array([b.cov for b in robots]),
            np.array([b.mean for b in targets]),
            np.array([b.cov for b in targets]),
        )

    @property
    def n_robots(self) -> int:
        return len(self.robot_means)

    @property
    def n_targets(self) -> int:
        return len(self.target_means)

    @property
    def robots(self) -> tuple[EntityBelief, ...]:
        return tuple(EntityBelief(m, c) for m, c in zip(self.robot_means, self.robot_covs))

    @property
    def targets(self) -> tuple[EntityBelief, ...]:
        return tuple(EntityBelief(m, c) for m, c in zip(self.target_means, self.target_covs))

    def trace_robots(self) -> float:
        return float(np.trace(self.robot_covs, axis1=1, axis2=2).sum())

    def trace_targets(self) -> float:
        return float(np.trace(self.target_covs, axis1=1, axis2=2).sum())

    def replace(self, **changes) -> JointBelief:
        return dataclasses.replace(self, **changes)


def block_diag_covs(covs: np.ndarray) -> np.ndarray:
    """Assemble a (2K, 2K) block-diagonal matrix from K stacked 2x2 blocks."""
    k = len(covs)
    out = np.zeros((2 * k, 2 * k))
    for i, c in enumerate(covs):
        out[2 * i:2 * i + 2, 2 * i:2 * i + 2] = c
    return out


def diag_blocks(P: np.ndarray) -> np.ndarray:
    k = P.shape[0] // 2
    return np.array([P[2 * i:2 * i + 2, 2 * i:2 * i + 2] for i in range(k)])


@dataclass(frozen=True)
class TargetScript:
    """Predefined control schedule for one target.

    ``kind`` is ``stationary``, ``constant`` (fixed ``velocity``) or
    ``piecewise`` (``segments`` of ``(start_step, (vx, vy))`` sorted by start).
    Every command is clamped to ``max_speed`` when it is set.
    """

    kind: str = "stationary"
    velocity: tuple[float, float] = (0.0, 0.0)
    segments: tuple[tuple[int, tuple[float, float]], ...] = ()
    max_speed: float | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == "constant":
            d["velocity"] = list(self.velocity)
        if self.kind == "piecewise":
            d["segments"] = [{"start": s, "velocity": list(v)} for s, v in self.segments]
        if self.max_speed is not None:
            d["max_speed"] = self.max_speed
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TargetScript:
        if not isinstance(d, dict):
            raise ConfigError(f"target script must be an object, got {d!r}")
        unknown = set(d) - {"kind", "velocity", "segments", "max_speed"}
        if unknown:
            raise ConfigError(f"unknown target script keys: {sorted(unknown)}")
        kind = d.get("kind", "stationary")
        velocity = tuple(float(x) for x in d.get("velocity", (0.0, 0.0)))
        segments = tuple(
            (int(s["start"]), tuple(float(x) for x in s["velocity"])) for s in d.get("segments", ())
        )
        max_speed = d.get("max_speed")
        return cls(kind, velocity, segments, None if max_speed is None else float(max_speed))

    def speed_bound(self) -> float:
        if self.kind == "constant":
            speeds = [math.hypot(*self.velocity)]
        elif self.kind == "piecewise":
            speeds = [math.hypot(*v) for _, v in self.segments]
        else:
            speeds = [0.0]
        top = max(speeds, default=0.0)
        return top if self.max_speed is None else min(top, self.max_speed)


@dataclass(frozen=True)
class ScenarioConfig:
    """Every parameter of one closed-loop tracking scenario.

    Fields left as ``None`` are derived by :func:`validate_config`:
    ``sigma_norm`` becomes ``r_c**4 / ln 2`` (maximum edge weight exactly 1) and
    ``q_target`` becomes the squared top speed of the target scripts.
    """

    n_robots: int = 5
    n_targets: int = 5
    r_c: float = 10.0
    d_min: float = 3.0
    u_max: float = 1.0
    dt: float = 1.0
    horizon: int = 50
    eps_conn: float = 1e-5
    sigma_norm: float | None = None
    action_magnitude: float = 1.0
    action_headings: int = 8
    q_robot: float = 0.01
    q_target: float | None = None
    sigma_range: float = 0.1
    sigma_bearing: float = 0.05
    sigma_gps: float = 0.5
    range_noise_scale: float = 0.0
    init_cov_robot: float = 25.0
    init_cov_target: float = 1000.0
    seed: int = 0
    planner: str = "greedy"
    target_scripts: tuple[TargetScript, ...] = ()
    arena: tuple[float, float] = (10.0, 10.0)
    planner_budget: int = 2000
    trace_weights: tuple[float, float] = (1.0, 1.0)
    cbf_gamma_connectivity: float = 1.0
    cbf_gamma_collision: float = 1.0
    safety_backtracks: int = 0

    def to_dict(self) -> dict[str, Any]:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "target_scripts":
                v = [s.to_dict() for s in v]
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ScenarioConfig:
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            if "target_scripts" in kw:
                kw["target_scripts"] = tuple(TargetScript.from_dict(s) for s in kw["target_scripts"])
            for key in ("arena", "trace_weights"):
                if key in kw:
                    kw[key] = tuple(float(x) for x in kw[key])
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"malformed configuration: {exc}") from exc
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> ScenarioConfig:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(d)


def default_sigma_norm(r_c: float) -> float:
    return r_c ** 4 / math.log(2.0)


def validate_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Check every invariant of ``cfg`` and fill derived defaults.

    Raises ConfigError naming the first violated invariant.
    """

    def need(ok: bool, msg: str):
        if not ok:
            raise ConfigError(msg)

    for name in ("n_robots", "n_targets", "horizon", "action_headings", "seed", "planner_budget",
                 "safety_backtracks"):
        need(isinstance(getattr(cfg, name), (int, np.integer)) and not isinstance(getattr(cfg, name), bool),
             f"{name} must be an integer")
    need(cfg.n_robots >= 1, "n_robots must be >= 1")
    need(cfg.n_targets >= 1, "n_targets must be >= 1")
    need(cfg.d_min > 0, "d_min must be > 0")
    need(cfg.r_c > cfg.d_min, "r_c must exceed d_min")
    need(cfg.u_max > 0, "u_max must be > 0")
    need(cfg.dt > 0, "dt must be > 0")
    need(cfg.eps_conn > 0, "eps_conn must be > 0")
    need(cfg.horizon >= 0, "horizon must be >= 0")
    need(cfg.sigma_norm is None or cfg.sigma_norm > 0, "sigma_norm must be > 0")
    need(cfg.action_magnitude >= 0, "action_magnitude must be >= 0")
    need(cfg.action_magnitude <= cfg.u_max + 1e-12, "action_magnitude must not exceed u_max")
    need(cfg.action_headings >= 1, "action_headings must be >= 1")
    for name in ("q_robot", "sigma_range", "sigma_bearing", "sigma_gps", "range_noise_scale",
                 "init_cov_robot", "init_cov_target"):
        need(getattr(cfg, name) >= 0, f"{name} must be >= 0")
    need(cfg.q_target is None or cfg.q_target >= 0, "q_target must be >= 0")
    need(cfg.planner in PLANNERS, f"planner must be one of {PLANNERS}")
    need(cfg.planner_budget >= 100, "planner_budget must be >= 100")
    need(len(cfg.arena) == 2 and min(cfg.arena) > 0, "arena must be two positive extents")
    need(len(cfg.trace_weights) == 2 and min(cfg.trace_weights) >= 0, "trace_weights must be two non-negative weights")
    need(0 < cfg.cbf_gamma_connectivity <= 1 and cfg.cbf_gamma_collision > 0,
         "CBF gains must be positive, connectivity gain at most 1")
    need(cfg.safety_backtracks >= 0, "safety_backtracks must be >= 0")
    need(len(cfg.target_scripts) in (0, cfg.n_targets), "target_scripts must list one script per target")
    for s in cfg.target_scripts:
        need(s.kind in SCRIPT_KINDS, f"unknown target script kind {s.kind!r}")
        need(s.max_speed is None or s.max_speed >= 0, "script max_speed must be >= 0")
        if s.kind == "piecewise":
            starts = [st for st, _ in s.segments]
            need(len(starts) > 0 and starts == sorted(starts) and starts[0] == 0,
                 "piecewise segments must start at step 0 and be sorted")
    numeric = [v for v in dataclasses.astuple(cfg) if isinstance(v, float)]
    need(all(math.isfinite(v) for v in numeric), "all numeric fields must be finite")

    scripts = cfg.target_scripts or tuple(TargetScript() for _ in range(cfg.n_targets))
    sigma = cfg.sigma_norm if cfg.sigma_norm is not None else default_sigma_norm(cfg.r_c)
    q_target = cfg.q_target
    if q_target is None:
        top = max(s.speed_bound() for s in scripts)
        q_target = top ** 2 if top > 0 else 0.01
    return dataclasses.replace(cfg, target_scripts=scripts, sigma_norm=sigma, q_target=q_target)


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_config(ScenarioConfig.from_json(fh.read()))


def tracking_demo_config(seed: int = 0, **overrides) -> ScenarioConfig:
    """Five robots tracking five targets that split into two groups.

    Three targets drift towards the upper left and two towards the lower right,
    which pulls the team apart and exercises both barrier constraints.
    """
    up_left = TargetScript("constant", (-0.1, 0.1))
    down_right = TargetScript("constant", (0.1, -0.1))
    base = ScenarioConfig(
        n_robots=5,
        n_targets=5,
        r_c=10.0,
        d_min=3.0,
        u_max=1.0,
        horizon=50,
        action_magnitude=1.0,
        init_cov_robot=25.0,
        init_cov_target=1000.0,
        seed=seed,
        target_scripts=(up_left, up_left, up_left, down_right, down_right),
        q_robot=0.001,
        sigma_range=0.5,
        sigma_bearing=0.2,
        sigma_gps=0.2,
        cbf_gamma_collision=1e-3,
        cbf_gamma_connectivity=0.05,
        safety_backtracks=5,
    )
    return validate_config(dataclasses.replace(base, **overrides))
